//! Stability selection around component-wise boosting.
//!
//! Each subsample of size `floor(n/2)` is boosted until `q` distinct
//! base-learners are selected. Selection frequencies over all fits decide
//! the stable set. Subsamples are drawn up front from the seed, so the fits
//! can run on a worker pool without changing the result.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosting::{self, BoostConfig, BoostError};
use crate::bounds::Assumption;
use crate::data::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabSelError {
    #[error("invalid stability selection configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least 4 observations for subsampling, got {0}")]
    TooFewObservations(usize),
    #[error("fit on subsample {index} failed: {source}")]
    Fit {
        index: usize,
        #[source]
        source: BoostError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SamplingScheme {
    /// `B` independent subsamples of size `floor(n/2)`.
    Subsample { b: usize },
    /// `B` random halves together with their complements (`2B` fits).
    ComplementaryPairs { b: usize },
}

impl SamplingScheme {
    pub fn b(&self) -> usize {
        match *self {
            SamplingScheme::Subsample { b } | SamplingScheme::ComplementaryPairs { b } => b,
        }
    }

    pub fn n_fits(&self) -> usize {
        match *self {
            SamplingScheme::Subsample { b } => b,
            SamplingScheme::ComplementaryPairs { b } => 2 * b,
        }
    }

    /// Scheme the error bound of `assumption` is derived for, with the
    /// customary number of replicates (100 subsamples, 50 pairs).
    pub fn default_for(assumption: Assumption) -> Self {
        match assumption {
            Assumption::None => SamplingScheme::Subsample { b: 100 },
            _ => SamplingScheme::ComplementaryPairs { b: 50 },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingScheme::Subsample { .. } => "subsample",
            SamplingScheme::ComplementaryPairs { .. } => "complementary_pairs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabSelConfig {
    pub q: usize,
    pub pi_thr: f64,
    pub scheme: SamplingScheme,
    pub seed: u64,
    pub boost: BoostConfig,
    /// Keep per-iteration selection frequencies.
    pub record_paths: bool,
}

impl StabSelConfig {
    pub fn new(q: usize, pi_thr: f64, scheme: SamplingScheme, seed: u64) -> Self {
        StabSelConfig {
            q,
            pi_thr,
            scheme,
            seed,
            boost: BoostConfig::default(),
            record_paths: true,
        }
    }

    pub fn validate(&self, p: usize) -> Result<(), StabSelError> {
        if self.q < 1 || self.q > p {
            return Err(StabSelError::InvalidConfig(format!(
                "q = {} not in [1, {p}]",
                self.q
            )));
        }
        if !(self.pi_thr > 0.5 && self.pi_thr <= 1.0) {
            return Err(StabSelError::InvalidConfig(format!(
                "pi_thr = {} not in (0.5, 1]",
                self.pi_thr
            )));
        }
        if self.scheme.b() < 2 {
            return Err(StabSelError::InvalidConfig(format!(
                "B = {} must be at least 2",
                self.scheme.b()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabSelResult {
    /// Relative selection frequency per base-learner over all fits.
    pub pi_hat: Vec<f64>,
    /// Frequency of selection in both halves of a pair (pairs only).
    pub pi_tilde: Option<Vec<f64>>,
    pub stable_set: Vec<usize>,
    /// Distinct selected base-learners per fit, in order of first selection.
    pub per_run_selected: Vec<Vec<usize>>,
    /// Iterations used per fit.
    pub per_run_iterations: Vec<usize>,
    /// `path[j][m - 1]`: fraction of fits that selected `j` within `m` iterations.
    pub path: Option<Vec<Vec<f64>>>,
    pub q: usize,
    pub pi_thr: f64,
    pub scheme: SamplingScheme,
}

impl StabSelResult {
    pub fn n_fits(&self) -> usize {
        self.per_run_selected.len()
    }

    /// Stable set at another threshold; paths and frequencies are
    /// threshold-free.
    pub fn stable_at(&self, pi_thr: f64) -> Vec<usize> {
        stable_set(&self.pi_hat, pi_thr)
    }
}

fn stable_set(pi_hat: &[f64], pi_thr: f64) -> Vec<usize> {
    pi_hat
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= pi_thr - 1e-12)
        .map(|(j, _)| j)
        .collect()
}

/// Index sets of size `floor(n/2)`, sorted ascending. Complementary pairs
/// come out as `[half_1, rest_1, half_2, rest_2, ...]`; for odd `n` one
/// random observation is dropped from each complement.
pub fn draw_subsamples(
    n: usize,
    scheme: SamplingScheme,
    seed: u64,
) -> Result<Vec<Vec<usize>>, StabSelError> {
    if n < 4 {
        return Err(StabSelError::TooFewObservations(n));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(scheme.n_fits());
    match scheme {
        SamplingScheme::Subsample { b } => {
            for _ in 0..b {
                let mut s = index::sample(&mut rng, n, half).into_vec();
                s.sort_unstable();
                out.push(s);
            }
        }
        SamplingScheme::ComplementaryPairs { b } => {
            let mut member = vec![false; n];
            for _ in 0..b {
                let mut s = index::sample(&mut rng, n, half).into_vec();
                s.sort_unstable();
                member.iter_mut().for_each(|m| *m = false);
                s.iter().for_each(|&i| member[i] = true);
                let mut rest: Vec<usize> = (0..n).filter(|&i| !member[i]).collect();
                if rest.len() > half {
                    let drop = rng.random_range(0..rest.len());
                    rest.remove(drop);
                }
                out.push(s);
                out.push(rest);
            }
        }
    }
    Ok(out)
}

/// Selection record of one subsample fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub selected: Vec<usize>,
    /// `(base-learner, iteration of first selection)` in selection order.
    pub first_selection: Vec<(usize, usize)>,
    pub iterations: usize,
}

impl FitRecord {
    /// Record where base-learners were picked in the given order, one per
    /// iteration.
    pub fn from_selected(selected: Vec<usize>) -> Self {
        let first_selection = selected
            .iter()
            .enumerate()
            .map(|(m, &j)| (j, m + 1))
            .collect();
        FitRecord {
            iterations: selected.len(),
            selected,
            first_selection,
        }
    }
}

/// Frequencies, stable set and paths from per-fit selections.
pub fn aggregate(p: usize, records: &[FitRecord], config: &StabSelConfig) -> StabSelResult {
    let n_fits = records.len() as f64;
    let mut counts = vec![0usize; p];
    for rec in records {
        rec.selected.iter().for_each(|&j| counts[j] += 1);
    }
    let pi_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / n_fits).collect();

    let pi_tilde = match config.scheme {
        SamplingScheme::ComplementaryPairs { .. } => {
            let mut both = vec![0usize; p];
            let mut in_first = vec![false; p];
            for pair in records.chunks_exact(2) {
                in_first.iter_mut().for_each(|v| *v = false);
                pair[0].selected.iter().for_each(|&j| in_first[j] = true);
                pair[1]
                    .selected
                    .iter()
                    .filter(|&&j| in_first[j])
                    .for_each(|&j| both[j] += 1);
            }
            let pairs = (records.len() / 2) as f64;
            Some(both.iter().map(|&c| c as f64 / pairs).collect())
        }
        SamplingScheme::Subsample { .. } => None,
    };

    let path = config.record_paths.then(|| {
        let m_grid = records.iter().map(|r| r.iterations).max().unwrap_or(0);
        let mut hits = vec![vec![0usize; m_grid]; p];
        for rec in records {
            for &(j, m) in &rec.first_selection {
                hits[j][m - 1] += 1;
            }
        }
        hits.into_iter()
            .map(|row| {
                let mut acc = 0usize;
                row.into_iter()
                    .map(|h| {
                        acc += h;
                        acc as f64 / n_fits
                    })
                    .collect()
            })
            .collect()
    });

    StabSelResult {
        stable_set: stable_set(&pi_hat, config.pi_thr),
        pi_hat,
        pi_tilde,
        per_run_selected: records.iter().map(|r| r.selected.clone()).collect(),
        per_run_iterations: records.iter().map(|r| r.iterations).collect(),
        path,
        q: config.q,
        pi_thr: config.pi_thr,
        scheme: config.scheme,
    }
}

fn fit_subsample(
    data: &Dataset,
    rows: &[usize],
    boost: BoostConfig,
) -> Result<FitRecord, BoostError> {
    let sub = data.select_rows(rows);
    let model = boosting::fit_until_q(&sub, boost)?;
    let first = model.first_selection();
    let selected = model.selected();
    let first_selection = selected
        .iter()
        .map(|&j| {
            (
                j,
                first[j].expect("selected base-learner has a first iteration"),
            )
        })
        .collect();
    Ok(FitRecord {
        selected,
        first_selection,
        iterations: model.m_done,
    })
}

/// Runs stability selection. Fits run on the current rayon pool.
pub fn run(data: &Dataset, config: &StabSelConfig) -> Result<StabSelResult, StabSelError> {
    config.validate(data.p())?;
    let subsamples = draw_subsamples(data.n(), config.scheme, config.seed)?;
    let boost = BoostConfig {
        target_q: Some(config.q),
        ..config.boost
    };
    let records: Vec<Result<FitRecord, BoostError>> = subsamples
        .par_iter()
        .map(|rows| fit_subsample(data, rows, boost))
        .collect();
    let records = records
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|source| StabSelError::Fit { index, source }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(data.p(), &records, config))
}

/// One row of the long-format stability path table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRow {
    pub base_learner: usize,
    pub iteration: usize,
    pub frequency: f64,
}

/// Long-format stability paths, ordered by base-learner then iteration.
pub fn stability_paths(result: &StabSelResult) -> Result<Vec<PathRow>, StabSelError> {
    let path = result
        .path
        .as_ref()
        .ok_or_else(|| StabSelError::InvalidConfig("run was made without path recording".into()))?;
    Ok(path
        .iter()
        .enumerate()
        .flat_map(|(j, row)| {
            row.iter().enumerate().map(move |(m, &f)| PathRow {
                base_learner: j,
                iteration: m + 1,
                frequency: f,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(q: usize, pi_thr: f64, scheme: SamplingScheme) -> StabSelConfig {
        StabSelConfig::new(q, pi_thr, scheme, 1)
    }

    #[test]
    fn subsample_sizes() {
        let s = draw_subsamples(4, SamplingScheme::Subsample { b: 3 }, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.len() == 2));
        assert!(draw_subsamples(3, SamplingScheme::Subsample { b: 3 }, 0).is_err());
    }

    #[test]
    fn odd_n_complementary_pairs() {
        let s = draw_subsamples(5, SamplingScheme::ComplementaryPairs { b: 2 }, 3).unwrap();
        assert_eq!(s.len(), 4);
        for pair in s.chunks(2) {
            assert_eq!(pair[0].len(), 2);
            assert_eq!(pair[1].len(), 2);
            assert!(pair[0].iter().all(|i| !pair[1].contains(i)));
        }
    }

    #[test]
    fn even_n_pairs_partition() {
        let s = draw_subsamples(10, SamplingScheme::ComplementaryPairs { b: 4 }, 8).unwrap();
        for pair in s.chunks(2) {
            let mut all: Vec<usize> = pair.concat();
            all.sort();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn draws_are_deterministic() {
        let a = draw_subsamples(100, SamplingScheme::Subsample { b: 100 }, 42).unwrap();
        let b = draw_subsamples(100, SamplingScheme::Subsample { b: 100 }, 42).unwrap();
        assert_eq!(a, b);
        let c = draw_subsamples(100, SamplingScheme::Subsample { b: 100 }, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn frequencies_and_threshold() {
        let cfg = config(2, 0.75, SamplingScheme::Subsample { b: 2 });
        let recs = vec![
            FitRecord::from_selected(vec![0, 1]),
            FitRecord::from_selected(vec![0, 2]),
        ];
        let res = aggregate(3, &recs, &cfg);
        assert_eq!(res.pi_hat, [1.0, 0.5, 0.5]);
        assert_eq!(res.stable_set, [0]);
        assert!(res.pi_tilde.is_none());
    }

    #[test]
    fn simultaneous_frequencies() {
        let cfg = config(2, 0.75, SamplingScheme::ComplementaryPairs { b: 1 });
        let recs = vec![
            FitRecord::from_selected(vec![0, 1]),
            FitRecord::from_selected(vec![0, 2]),
        ];
        let res = aggregate(3, &recs, &cfg);
        assert_eq!(res.pi_tilde.unwrap(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn path_examples() {
        let cfg = config(1, 0.9, SamplingScheme::Subsample { b: 2 });
        let recs = vec![FitRecord {
            selected: vec![0],
            first_selection: vec![(0, 1)],
            iterations: 3,
        }];
        let res = aggregate(2, &recs, &cfg);
        let rows = stability_paths(&res).unwrap();
        let j0: Vec<f64> = rows
            .iter()
            .filter(|r| r.base_learner == 0)
            .map(|r| r.frequency)
            .collect();
        let j1: Vec<f64> = rows
            .iter()
            .filter(|r| r.base_learner == 1)
            .map(|r| r.frequency)
            .collect();
        assert_eq!(j0, [1.0, 1.0, 1.0]);
        assert_eq!(j1, [0.0, 0.0, 0.0]);

        let no_paths = StabSelConfig {
            record_paths: false,
            ..cfg
        };
        assert!(stability_paths(&aggregate(2, &recs, &no_paths)).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = config(0, 0.8, SamplingScheme::Subsample { b: 10 });
        assert!(cfg.validate(5).is_err());
        assert!(config(6, 0.8, SamplingScheme::Subsample { b: 10 })
            .validate(5)
            .is_err());
        assert!(config(2, 0.5, SamplingScheme::Subsample { b: 10 })
            .validate(5)
            .is_err());
        assert!(config(2, 0.8, SamplingScheme::Subsample { b: 1 })
            .validate(5)
            .is_err());
        assert!(config(2, 0.8, SamplingScheme::Subsample { b: 2 })
            .validate(5)
            .is_ok());
    }
}
