//! Simulation harness: Gaussian designs with independent or Toeplitz
//! covariance, logistic responses with a sparse signal, and a grid runner
//! that reports true positive rates and false positives of the stable set.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosting::BoostConfig;
use crate::bounds::{self, Assumption, BoundError, ParamRequest};
use crate::data::{self, DataError, Dataset, Family, Matrix};
use crate::stabsel::{self, SamplingScheme, StabSelConfig, StabSelError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error("grid config: {0}")]
    Grid(String),
    #[error("covariance factorization failed for {0:?}")]
    Factorization(Design),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("replicate {replicate} of setting {setting}: {source}")]
    Replicate {
        setting: String,
        replicate: usize,
        #[source]
        source: StabSelError,
    },
    #[error("writing {path}: {message}")]
    Io { path: String, message: String },
}

/// Covariance structure of the covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Design {
    Independent,
    /// `Sigma_kl = rho^|k - l|`.
    Toeplitz {
        rho: f64,
    },
}

impl Design {
    pub fn label(&self) -> String {
        match self {
            Design::Independent => "independent".into(),
            Design::Toeplitz { rho } => format!("toeplitz({rho})"),
        }
    }

    pub fn covariance(&self, p: usize) -> DMatrix<f64> {
        match *self {
            Design::Independent => DMatrix::identity(p, p),
            Design::Toeplitz { rho } => {
                DMatrix::from_fn(p, p, |k, l| rho.powi((k as i32 - l as i32).abs()))
            }
        }
    }
}

/// Lower-triangular factor `L` with `L L^T = Sigma`.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    design: Design,
    lower: Option<DMatrix<f64>>,
}

impl CovarianceFactor {
    pub fn new(p: usize, design: Design) -> Result<Self, SimError> {
        let lower = match design {
            Design::Independent => None,
            Design::Toeplitz { .. } => Some(
                design
                    .covariance(p)
                    .cholesky()
                    .ok_or(SimError::Factorization(design))?
                    .unpack(),
            ),
        };
        Ok(CovarianceFactor { design, lower })
    }

    pub fn lower(&self) -> Option<&DMatrix<f64>> {
        self.lower.as_ref()
    }

    /// `n` rows drawn from `N(0, Sigma)`.
    pub fn sample<R: Rng>(&self, n: usize, p: usize, rng: &mut R) -> Matrix {
        let mut x = Matrix::zeros(n, p);
        let mut z = vec![0.0; p];
        for i in 0..n {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            match &self.lower {
                None => (0..p).for_each(|k| x.set(i, k, z[k])),
                Some(l) => {
                    for k in 0..p {
                        let v: f64 = (0..=k).map(|m| l[(k, m)] * z[m]).sum();
                        x.set(i, k, v);
                    }
                }
            }
        }
        x
    }

    pub fn design(&self) -> Design {
        self.design
    }
}

pub fn gen_design(n: usize, p: usize, design: Design, seed: u64) -> Result<Matrix, SimError> {
    let factor = CovarianceFactor::new(p, design)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(factor.sample(n, p, &mut rng))
}

/// Simulated logistic response with a sparse `±1` signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub y: Vec<f64>,
    pub beta: Vec<f64>,
    /// Influential covariates, ascending.
    pub signal: Vec<usize>,
}

pub fn gen_response<R: Rng>(x: &Matrix, p_infl: usize, rng: &mut R) -> Result<Response, SimError> {
    let p = x.ncols();
    if p_infl > p {
        return Err(SimError::InvalidSetting(format!(
            "p_infl = {p_infl} exceeds p = {p}"
        )));
    }
    let mut signal = index::sample(rng, p, p_infl).into_vec();
    signal.sort_unstable();
    let mut beta = vec![0.0; p];
    for &j in &signal {
        beta[j] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let mut eta = vec![0.0; x.nrows()];
    for &j in &signal {
        for (e, &v) in eta.iter_mut().zip(x.column(j)) {
            *e += beta[j] * v;
        }
    }
    let y = eta
        .iter()
        .map(|&e| {
            if rng.random_bool(data::logistic(e)) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(Response { y, beta, signal })
}

/// Iteration cap for simulated fits. Small logistic subsamples are often
/// separable; boosting then still adds variables, but slowly, so the cap is
/// well above the library default.
pub const SIM_M_MAX: usize = 100_000;

/// Boosting configuration used by simulations unless overridden.
pub fn sim_boost_config() -> BoostConfig {
    BoostConfig {
        m_max: SIM_M_MAX,
        ..BoostConfig::default()
    }
}

/// Seed derived from a master seed and a path of counters (SplitMix64).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(master), |acc, &c| mix(acc ^ mix(c)))
}

/// TPR (`None` without signal) and false positive count of a stable set.
pub fn selection_metrics(stable: &[usize], signal: &[usize]) -> (Option<f64>, usize) {
    let tp = stable.iter().filter(|j| signal.contains(j)).count();
    let fp = stable.len() - tp;
    let tpr = (!signal.is_empty()).then(|| tp as f64 / signal.len() as f64);
    (tpr, fp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub n: usize,
    pub p: usize,
    pub p_infl: usize,
    pub design: Design,
    pub pi_thr: f64,
    pub pfer_max: f64,
    pub assumption: Assumption,
    /// Subsamples (no assumption) or complementary pairs.
    pub b: usize,
    pub replicates: usize,
    pub seed: u64,
    pub boost: BoostConfig,
}

impl SimSetting {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSetting(m));
        if self.n < 4 {
            return bad(format!("n = {} must be at least 4", self.n));
        }
        if self.p < 1 || self.p_infl > self.p {
            return bad(format!(
                "p_infl = {} must not exceed p = {}",
                self.p_infl, self.p
            ));
        }
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if let Design::Toeplitz { rho } = self.design {
            if !(rho > -1.0 && rho < 1.0) {
                return bad(format!("rho = {rho} must lie in (-1, 1)"));
            }
        }
        Ok(())
    }

    pub fn scheme(&self) -> SamplingScheme {
        match self.assumption {
            Assumption::None => SamplingScheme::Subsample { b: self.b },
            _ => SamplingScheme::ComplementaryPairs { b: self.b },
        }
    }

    /// Solves `q` from `(pi_thr, pfer_max)` under the setting's bound.
    pub fn solve(&self) -> Result<bounds::SolvedParams, SimError> {
        Ok(bounds::solve_params(&ParamRequest {
            q: None,
            pi_thr: Some(self.pi_thr),
            pfer_max: Some(self.pfer_max),
            p: self.p,
            b: self.b,
            assumption: Some(self.assumption),
        })?)
    }

    fn key(&self) -> String {
        format!(
            "n={} p={} p_infl={} design={} pi_thr={} pfer_max={} assumption={}",
            self.n,
            self.p,
            self.p_infl,
            self.design.label(),
            self.pi_thr,
            self.pfer_max,
            self.assumption
        )
    }

    /// Seed of the simulated data for one replicate. It ignores the
    /// selection parameters so settings differing only in those see
    /// identical data.
    pub fn data_seed(&self, replicate: usize) -> u64 {
        let design_tag = match self.design {
            Design::Independent => 0,
            Design::Toeplitz { rho } => 1 ^ rho.to_bits(),
        };
        derive_seed(
            self.seed,
            &[
                self.n as u64,
                self.p as u64,
                self.p_infl as u64,
                design_tag,
                replicate as u64,
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub tpr: Option<f64>,
    pub fp: usize,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// Position of the setting in the grid enumeration.
    pub setting_id: usize,
    pub setting: SimSetting,
    pub q: usize,
    /// Threshold actually used (grid-snapped for the pair-based bounds).
    pub pi_thr: f64,
    pub realized_bound: f64,
    pub mean_tpr: Option<f64>,
    pub mean_fp: f64,
    /// Mean false positives exceed `pfer_max`.
    pub violated: bool,
    pub replicates: Vec<ReplicateRecord>,
}

/// One replicate: simulate, run stability selection, score.
pub fn run_replicate(
    setting: &SimSetting,
    factor: &CovarianceFactor,
    q: usize,
    pi_thr: f64,
    replicate: usize,
) -> Result<ReplicateRecord, StabSelError> {
    let seed = setting.data_seed(replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = factor.sample(setting.n, setting.p, &mut rng);
    let resp = gen_response(&x, setting.p_infl, &mut rng)
        .map_err(|e| StabSelError::InvalidConfig(e.to_string()))?;
    let data = Dataset::new(
        x,
        resp.y,
        Dataset::default_names(setting.p),
        Family::Binomial,
    )
    .map_err(|e| StabSelError::InvalidConfig(e.to_string()))?;
    let config = StabSelConfig {
        q,
        pi_thr,
        scheme: setting.scheme(),
        seed: derive_seed(seed, &[1]),
        boost: setting.boost,
        record_paths: false,
    };
    let result = stabsel::run(&data, &config)?;
    let (tpr, fp) = selection_metrics(&result.stable_set, &resp.signal);
    Ok(ReplicateRecord {
        replicate,
        seed,
        tpr,
        fp,
        n_selected: result.stable_set.len(),
    })
}

fn summarize(
    setting: SimSetting,
    q: usize,
    pi_thr: f64,
    realized: f64,
    reps: Vec<ReplicateRecord>,
) -> SimResult {
    let tprs: Vec<f64> = reps.iter().filter_map(|r| r.tpr).collect();
    let mean_tpr = (!tprs.is_empty()).then(|| tprs.iter().sum::<f64>() / tprs.len() as f64);
    let mean_fp = reps.iter().map(|r| r.fp as f64).sum::<f64>() / reps.len() as f64;
    SimResult {
        setting_id: 0,
        setting,
        q,
        pi_thr,
        realized_bound: realized,
        mean_tpr,
        mean_fp,
        violated: mean_fp > setting.pfer_max,
        replicates: reps,
    }
}

/// Runs all replicates of one setting.
pub fn run_setting(setting: &SimSetting) -> Result<SimResult, SimError> {
    setting.validate()?;
    let solved = setting.solve()?;
    let factor = CovarianceFactor::new(setting.p, setting.design)?;
    let reps = (0..setting.replicates)
        .into_par_iter()
        .map(|r| run_replicate(setting, &factor, solved.q, solved.pi_thr, r))
        .collect::<Vec<_>>()
        .into_iter()
        .enumerate()
        .map(|(replicate, r)| {
            r.map_err(|source| SimError::Replicate {
                setting: setting.key(),
                replicate,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(
        *setting,
        solved.q,
        solved.pi_thr,
        solved.realized_bound,
        reps,
    ))
}

fn default_replicates() -> usize {
    50
}
fn default_rho() -> f64 {
    0.9
}
fn default_b_subsample() -> usize {
    100
}
fn default_b_pairs() -> usize {
    50
}

/// Kind of covariance in a grid file; the Toeplitz `rho` is global.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Independent,
    Toeplitz,
}

/// Experiment grid as read from TOML: each list is one axis of the
/// Cartesian product.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub seed: Option<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub p_infl: Vec<usize>,
    pub design: Vec<DesignKind>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub pi_thr: Vec<f64>,
    pub pfer_max: Vec<f64>,
    pub assumption: Vec<Assumption>,
    /// Subsamples for the assumption-free bound.
    #[serde(default = "default_b_subsample")]
    pub b_subsample: usize,
    /// Complementary pairs for the unimodal and r-concave bounds.
    #[serde(default = "default_b_pairs")]
    pub b_pairs: usize,
    pub nu: Option<f64>,
    pub m_max: Option<usize>,
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: GridConfig = toml::from_str(text).map_err(|e| SimError::Grid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// Reduced grid: `p = 100`, `n` in {50, 100, 200}, 50 replicates.
    pub fn desk_scale() -> Self {
        GridConfig {
            seed: None,
            replicates: 50,
            n: vec![50, 100, 200],
            p: vec![100],
            p_infl: vec![2, 3, 8],
            design: vec![DesignKind::Independent, DesignKind::Toeplitz],
            rho: 0.9,
            pi_thr: vec![0.6, 0.75, 0.9],
            pfer_max: vec![1.0, 2.0],
            assumption: Assumption::ALL.to_vec(),
            b_subsample: 100,
            b_pairs: 50,
            nu: None,
            m_max: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |key: String, msg: &str| Err(SimError::Grid(format!("`{key}`: {msg}")));
        for (key, len) in [
            ("n", self.n.len()),
            ("p", self.p.len()),
            ("p_infl", self.p_infl.len()),
            ("design", self.design.len()),
            ("pi_thr", self.pi_thr.len()),
            ("pfer_max", self.pfer_max.len()),
            ("assumption", self.assumption.len()),
        ] {
            if len == 0 {
                return err(key.into(), "list must not be empty");
            }
        }
        for (i, &n) in self.n.iter().enumerate() {
            if n < 4 {
                return err(format!("n[{i}]"), "must be at least 4");
            }
        }
        for (i, &p) in self.p.iter().enumerate() {
            if p < 1 {
                return err(format!("p[{i}]"), "must be positive");
            }
        }
        let p_min = *self.p.iter().min().unwrap();
        for (i, &k) in self.p_infl.iter().enumerate() {
            if k > p_min {
                return err(format!("p_infl[{i}]"), "must not exceed every p");
            }
        }
        for (i, &pi) in self.pi_thr.iter().enumerate() {
            if !(pi > 0.5 && pi <= 1.0) {
                return err(format!("pi_thr[{i}]"), "must lie in (0.5, 1]");
            }
        }
        for (i, &v) in self.pfer_max.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("pfer_max[{i}]"), "must be positive");
            }
        }
        if self.replicates < 1 {
            return err("replicates".into(), "must be at least 1");
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return err("rho".into(), "must lie in (-1, 1)");
        }
        if self.b_subsample < 2 {
            return err("b_subsample".into(), "must be at least 2");
        }
        if self.b_pairs < 2 {
            return err("b_pairs".into(), "must be at least 2");
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0 && nu <= 1.0) {
                return err("nu".into(), "must lie in (0, 1]");
            }
        }
        if self.m_max == Some(0) {
            return err("m_max".into(), "must be positive");
        }
        Ok(())
    }

    /// Cartesian product of all axes, in declaration order.
    pub fn settings(&self, master_seed: u64) -> Vec<SimSetting> {
        let boost = BoostConfig {
            nu: self.nu.unwrap_or(0.1),
            m_max: self.m_max.unwrap_or(SIM_M_MAX),
            target_q: None,
        };
        let mut out = Vec::new();
        for &n in &self.n {
            for &p in &self.p {
                for &p_infl in &self.p_infl {
                    for &kind in &self.design {
                        let design = match kind {
                            DesignKind::Independent => Design::Independent,
                            DesignKind::Toeplitz => Design::Toeplitz { rho: self.rho },
                        };
                        for &pi_thr in &self.pi_thr {
                            for &pfer_max in &self.pfer_max {
                                for &assumption in &self.assumption {
                                    let b = match assumption {
                                        Assumption::None => self.b_subsample,
                                        _ => self.b_pairs,
                                    };
                                    out.push(SimSetting {
                                        n,
                                        p,
                                        p_infl,
                                        design,
                                        pi_thr,
                                        pfer_max,
                                        assumption,
                                        b,
                                        replicates: self.replicates,
                                        seed: master_seed,
                                        boost,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// A setting aborted by a replicate-level failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedSetting {
    pub setting_id: usize,
    pub setting: SimSetting,
    pub error: String,
}

/// Results of a whole grid, in setting order. Settings whose replicates
/// failed are reported separately and excluded from the summaries.
#[derive(Debug, Clone)]
pub struct GridReport {
    pub results: Vec<SimResult>,
    pub failed: Vec<FailedSetting>,
}

/// Runs every setting; replicates of all settings share one worker pool.
/// Invalid settings abort the grid; a failing replicate only aborts its
/// own setting.
pub fn run_grid(config: &GridConfig, master_seed: u64) -> Result<GridReport, SimError> {
    config.validate()?;
    let settings = config.settings(master_seed);
    let prepared = settings
        .iter()
        .map(|s| {
            s.validate()?;
            let solved = s.solve()?;
            let factor = CovarianceFactor::new(s.p, s.design)?;
            Ok((solved, factor))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let jobs: Vec<(usize, usize)> = settings
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.replicates).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let (solved, factor) = &prepared[i];
            run_replicate(&settings[i], factor, solved.q, solved.pi_thr, r)
        })
        .collect();
    let mut per_setting: Vec<Result<Vec<ReplicateRecord>, SimError>> =
        (0..settings.len()).map(|_| Ok(Vec::new())).collect();
    for (&(i, r), outcome) in jobs.iter().zip(outcomes) {
        let Ok(records) = &mut per_setting[i] else {
            continue;
        };
        match outcome {
            Ok(rec) => records.push(rec),
            Err(source) => {
                per_setting[i] = Err(SimError::Replicate {
                    setting: settings[i].key(),
                    replicate: r,
                    source,
                })
            }
        }
    }
    let mut report = GridReport {
        results: Vec::new(),
        failed: Vec::new(),
    };
    for (id, ((s, (solved, _)), reps)) in settings
        .into_iter()
        .zip(prepared)
        .zip(per_setting)
        .enumerate()
    {
        match reps {
            Ok(reps) => {
                let mut res = summarize(s, solved.q, solved.pi_thr, solved.realized_bound, reps);
                res.setting_id = id;
                report.results.push(res);
            }
            Err(e) => report.failed.push(FailedSetting {
                setting_id: id,
                setting: s,
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

/// Summary of the settings sharing one (design, pfer_max, assumption).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub design: String,
    pub pfer_max: f64,
    pub assumption: Assumption,
    pub n_settings: usize,
    pub mean_tpr: Option<f64>,
    pub mean_fp: f64,
    pub max_mean_fp: f64,
    pub n_violated: usize,
    pub violation_rate: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl GridReport {
    /// Fraction of settings whose mean false positive count exceeds `pfer_max`.
    pub fn violation_rate(&self) -> f64 {
        let v = self.results.iter().filter(|r| r.violated).count();
        v as f64 / self.results.len().max(1) as f64
    }

    pub fn groups(&self) -> Vec<GroupSummary> {
        let mut groups: BTreeMap<(String, u64, Assumption), Vec<&SimResult>> = BTreeMap::new();
        for r in &self.results {
            let key = (
                r.setting.design.label(),
                r.setting.pfer_max.to_bits(),
                r.setting.assumption,
            );
            groups.entry(key).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((design, pfer_bits, assumption), rs)| {
                let tprs: Vec<f64> = rs.iter().filter_map(|r| r.mean_tpr).collect();
                let n_violated = rs.iter().filter(|r| r.violated).count();
                GroupSummary {
                    design,
                    pfer_max: f64::from_bits(pfer_bits),
                    assumption,
                    n_settings: rs.len(),
                    mean_tpr: (!tprs.is_empty())
                        .then(|| tprs.iter().sum::<f64>() / tprs.len() as f64),
                    mean_fp: rs.iter().map(|r| r.mean_fp).sum::<f64>() / rs.len() as f64,
                    max_mean_fp: rs.iter().map(|r| r.mean_fp).fold(0.0, f64::max),
                    n_violated,
                    violation_rate: n_violated as f64 / rs.len() as f64,
                }
            })
            .collect()
    }

    /// One row per (setting, replicate).
    pub fn write_replicates_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "setting",
            "n",
            "p",
            "p_infl",
            "design",
            "assumption",
            "pi_thr",
            "pfer_max",
            "q",
            "B",
            "replicate",
            "seed",
            "tpr",
            "fp",
            "n_selected",
        ])?;
        for r in &self.results {
            let s = &r.setting;
            for rep in &r.replicates {
                out.write_record([
                    r.setting_id.to_string(),
                    s.n.to_string(),
                    s.p.to_string(),
                    s.p_infl.to_string(),
                    s.design.label(),
                    s.assumption.to_string(),
                    r.pi_thr.to_string(),
                    s.pfer_max.to_string(),
                    r.q.to_string(),
                    s.b.to_string(),
                    rep.replicate.to_string(),
                    rep.seed.to_string(),
                    fmt_opt(rep.tpr),
                    rep.fp.to_string(),
                    rep.n_selected.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// One row per setting, with every facet as a column.
    pub fn write_settings_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "setting",
            "n",
            "p",
            "p_infl",
            "design",
            "assumption",
            "pi_thr",
            "pfer_max",
            "q",
            "B",
            "realized_bound",
            "replicates",
            "mean_tpr",
            "mean_fp",
            "violated",
            "error",
        ])?;
        let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
        for r in &self.results {
            let s = &r.setting;
            rows.push((
                r.setting_id,
                vec![
                    r.setting_id.to_string(),
                    s.n.to_string(),
                    s.p.to_string(),
                    s.p_infl.to_string(),
                    s.design.label(),
                    s.assumption.to_string(),
                    r.pi_thr.to_string(),
                    s.pfer_max.to_string(),
                    r.q.to_string(),
                    s.b.to_string(),
                    r.realized_bound.to_string(),
                    r.replicates.len().to_string(),
                    fmt_opt(r.mean_tpr),
                    r.mean_fp.to_string(),
                    r.violated.to_string(),
                    String::new(),
                ],
            ));
        }
        for f in &self.failed {
            let s = &f.setting;
            rows.push((
                f.setting_id,
                vec![
                    f.setting_id.to_string(),
                    s.n.to_string(),
                    s.p.to_string(),
                    s.p_infl.to_string(),
                    s.design.label(),
                    s.assumption.to_string(),
                    s.pi_thr.to_string(),
                    s.pfer_max.to_string(),
                    String::new(),
                    s.b.to_string(),
                    String::new(),
                    "0".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    f.error.clone(),
                ],
            ));
        }
        rows.sort_by_key(|(id, _)| *id);
        for (_, row) in rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per (design, pfer_max, assumption) group.
    pub fn write_aggregate_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "design",
            "pfer_max",
            "assumption",
            "n_settings",
            "mean_tpr",
            "mean_fp",
            "max_mean_fp",
            "n_violated",
            "violation_rate",
        ])?;
        for g in self.groups() {
            out.write_record([
                g.design,
                g.pfer_max.to_string(),
                g.assumption.to_string(),
                g.n_settings.to_string(),
                fmt_opt(g.mean_tpr),
                g.mean_fp.to_string(),
                g.max_mean_fp.to_string(),
                g.n_violated.to_string(),
                g.violation_rate.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `replicates.csv`, `settings.csv` and `aggregate.csv` into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        let io = |path: &Path, e: String| SimError::Io {
            path: path.display().to_string(),
            message: e,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e.to_string()))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(|f| (f, path.clone()))
                .map_err(|e| io(&path, e.to_string()))
        };
        let (f, path) = create("replicates.csv")?;
        self.write_replicates_csv(f)
            .map_err(|e| io(&path, e.to_string()))?;
        let (f, path) = create("settings.csv")?;
        self.write_settings_csv(f)
            .map_err(|e| io(&path, e.to_string()))?;
        let (f, path) = create("aggregate.csv")?;
        self.write_aggregate_csv(f)
            .map_err(|e| io(&path, e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toeplitz_covariance_and_factor() {
        let sigma = Design::Toeplitz { rho: 0.9 }.covariance(3);
        assert_eq!(sigma[(0, 0)], 1.0);
        assert_eq!(sigma[(0, 1)], 0.9);
        assert!((sigma[(0, 2)] - 0.81).abs() < 1e-15);
        let f = CovarianceFactor::new(3, Design::Toeplitz { rho: 0.9 }).unwrap();
        let l = f.lower().unwrap();
        let back = l * l.transpose();
        assert!((back - sigma).abs().max() < 1e-12);
        assert!(CovarianceFactor::new(3, Design::Toeplitz { rho: 1.0 }).is_err());
    }

    #[test]
    fn independent_design_covariance() {
        let x = gen_design(10_000, 2, Design::Independent, 5).unwrap();
        let cov = |a: &[f64], b: &[f64]| {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / (a.len() - 1) as f64
        };
        let (c0, c1) = (x.column(0), x.column(1));
        assert!((cov(c0, c0) - 1.0).abs() < 0.05);
        assert!((cov(c1, c1) - 1.0).abs() < 0.05);
        assert!(cov(c0, c1).abs() < 0.05);
    }

    #[test]
    fn toeplitz_sample_correlation() {
        let x = gen_design(20_000, 3, Design::Toeplitz { rho: 0.9 }, 8).unwrap();
        let corr01: f64 = x
            .column(0)
            .iter()
            .zip(x.column(1))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / 20_000.0;
        let corr02: f64 = x
            .column(0)
            .iter()
            .zip(x.column(2))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / 20_000.0;
        assert!((corr01 - 0.9).abs() < 0.03);
        assert!((corr02 - 0.81).abs() < 0.03);
    }

    #[test]
    fn designs_are_deterministic() {
        let a = gen_design(20, 5, Design::Toeplitz { rho: 0.9 }, 3).unwrap();
        let b = gen_design(20, 5, Design::Toeplitz { rho: 0.9 }, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn response_construction() {
        let x = gen_design(100, 10, Design::Independent, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = gen_response(&x, 2, &mut rng).unwrap();
        assert_eq!(r.signal.len(), 2);
        assert_eq!(r.beta.iter().filter(|b| **b != 0.0).count(), 2);
        assert!(r.signal.iter().all(|&j| r.beta[j].abs() == 1.0));
        assert!(r.y.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(gen_response(&x, 11, &mut rng).is_err());
    }

    #[test]
    fn null_response_is_fair_coin() {
        let x = gen_design(10_000, 3, Design::Independent, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = gen_response(&x, 0, &mut rng).unwrap();
        assert!(r.beta.iter().all(|&b| b == 0.0));
        assert!(r.signal.is_empty());
        let mean = r.y.iter().sum::<f64>() / r.y.len() as f64;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn metrics() {
        assert_eq!(selection_metrics(&[1, 4], &[1, 4]), (Some(1.0), 0));
        assert_eq!(selection_metrics(&[], &[1, 4]), (Some(0.0), 0));
        assert_eq!(selection_metrics(&[1, 2, 3], &[1, 4]), (Some(0.5), 2));
        assert_eq!(selection_metrics(&[2], &[]), (None, 1));
    }

    #[test]
    fn seeds_split_by_counter() {
        let a = derive_seed(7, &[1, 2]);
        assert_eq!(a, derive_seed(7, &[1, 2]));
        assert_ne!(a, derive_seed(7, &[2, 1]));
        assert_ne!(a, derive_seed(8, &[1, 2]));
    }

    #[test]
    fn grid_product_and_validation() {
        let text = r#"
            replicates = 2
            n = [50, 100]
            p = [20]
            p_infl = [2]
            design = ["independent", "toeplitz"]
            pi_thr = [0.75]
            pfer_max = [1.0]
            assumption = ["none"]
        "#;
        let cfg = GridConfig::from_toml(text).unwrap();
        assert_eq!(cfg.settings(1).len(), 4);
        assert_eq!(cfg.b_subsample, 100);

        let bad = text.replace("n = [50, 100]", "n = [50, 2]");
        let err = GridConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("n[1]"), "{err}");
        let bad = text.replace("pi_thr = [0.75]", "pi_thr = [\"high\"]");
        let err = GridConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("pi_thr"), "{err}");
        let bad = format!("{text}\nbogus = 1\n");
        assert!(GridConfig::from_toml(&bad)
            .unwrap_err()
            .to_string()
            .contains("bogus"));
    }

    #[test]
    fn desk_grid_is_expressible() {
        let cfg = GridConfig::desk_scale();
        cfg.validate().unwrap();
        assert_eq!(cfg.settings(0).len(), 3 * 3 * 2 * 3 * 2 * 3);
    }
}
