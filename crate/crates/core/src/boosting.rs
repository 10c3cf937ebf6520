//! Component-wise functional gradient descent boosting with simple linear
//! base-learners.
//!
//! Every covariate is one base-learner: a least-squares fit through the
//! origin on the mean-centered column. Each iteration fits all of them to the
//! current pseudo-residuals and moves the best one a fraction `nu` of the way.
//! The intercept is carried by a fixed offset and is never selected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, Dataset, Family, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoostError {
    #[error("invalid boosting configuration: {0}")]
    InvalidConfig(String),
    #[error("no fittable base-learner: every covariate column is constant")]
    NoFittableBaseLearner,
    #[error("q = {q} exceeds the number of non-constant base-learners ({fittable})")]
    QExceedsFittable { q: usize, fittable: usize },
    #[error(
        "q not reached within m_max: {distinct} of {q} base-learners selected after {m_max} \
         iterations (q too large or nu too small)"
    )]
    QNotReached {
        q: usize,
        distinct: usize,
        m_max: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Step length in (0, 1].
    pub nu: f64,
    /// Hard cap on the number of iterations.
    pub m_max: usize,
    /// Stop as soon as this many distinct base-learners were selected.
    pub target_q: Option<usize>,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            nu: 0.1,
            m_max: 10_000,
            target_q: None,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self, p: usize) -> Result<(), BoostError> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(BoostError::InvalidConfig(format!(
                "nu = {} not in (0, 1]",
                self.nu
            )));
        }
        if self.m_max < 1 {
            return Err(BoostError::InvalidConfig("m_max must be at least 1".into()));
        }
        if let Some(q) = self.target_q {
            if q < 1 || q > p {
                return Err(BoostError::InvalidConfig(format!(
                    "target_q = {q} not in [1, {p}]"
                )));
            }
        }
        Ok(())
    }
}

/// Mean-centered copy of a design matrix with per-column sums of squares.
#[derive(Debug, Clone)]
pub struct CenteredDesign {
    x: Matrix,
    means: Vec<f64>,
    sumsq: Vec<f64>,
    fittable: Vec<bool>,
}

impl CenteredDesign {
    pub fn new(x: &Matrix) -> Self {
        let n = x.nrows();
        let mut centered = x.clone();
        let mut means = Vec::with_capacity(x.ncols());
        let mut sumsq = Vec::with_capacity(x.ncols());
        let mut fittable = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let raw = x.column(j);
            let first = raw[0];
            let constant = raw.iter().all(|&v| v == first);
            let mean = raw.iter().sum::<f64>() / n as f64;
            let col = centered.column_mut(j);
            for v in col.iter_mut() {
                *v -= mean;
            }
            let ss: f64 = col.iter().map(|v| v * v).sum();
            means.push(mean);
            sumsq.push(ss);
            fittable.push(!constant && ss > 0.0);
        }
        CenteredDesign {
            x: centered,
            means,
            sumsq,
            fittable,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Whether column `j` is a candidate (non-constant).
    pub fn is_fittable(&self, j: usize) -> bool {
        self.fittable[j]
    }

    pub fn n_fittable(&self) -> usize {
        self.fittable.iter().filter(|&&f| f).count()
    }

    /// Best base-learner for the working response `u`: the column whose
    /// fit through the origin leaves the smallest residual sum of squares,
    /// lowest index on exact ties. Returns `(index, coefficient)`.
    pub fn best_fit(&self, u: &[f64]) -> Option<(usize, f64)> {
        let uu: f64 = u.iter().map(|v| v * v).sum();
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.x.ncols() {
            if !self.fittable[j] {
                continue;
            }
            let dot: f64 = self.x.column(j).iter().zip(u).map(|(a, b)| a * b).sum();
            let rss = uu - dot * dot / self.sumsq[j];
            if best.is_none_or(|(_, _, b)| rss < b) {
                best = Some((j, dot / self.sumsq[j], rss));
            }
        }
        best.map(|(j, coef, _)| (j, coef))
    }
}

/// Fitted boosting model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub offset: f64,
    /// Slopes on the centered covariates.
    pub beta: Vec<f64>,
    /// Column means used for centering.
    pub centers: Vec<f64>,
    /// Selected base-learner per iteration.
    pub selection_history: Vec<usize>,
    pub m_done: usize,
    pub family: Family,
    pub config: BoostConfig,
}

impl BoostModel {
    /// Distinct selected base-learners in order of first selection.
    pub fn selected(&self) -> Vec<usize> {
        let mut seen = vec![false; self.beta.len()];
        let mut out = Vec::new();
        for &j in &self.selection_history {
            if !seen[j] {
                seen[j] = true;
                out.push(j);
            }
        }
        out
    }

    /// Iteration (1-based) at which each base-learner was first selected.
    pub fn first_selection(&self) -> Vec<Option<usize>> {
        let mut first = vec![None; self.beta.len()];
        for (m, &j) in self.selection_history.iter().enumerate() {
            first[j].get_or_insert(m + 1);
        }
        first
    }

    /// Linear predictor on raw (uncentered) covariates.
    pub fn predict_eta(&self, x: &Matrix) -> Vec<f64> {
        let mut eta = vec![self.offset; x.nrows()];
        for (j, (&b, &c)) in self.beta.iter().zip(&self.centers).enumerate() {
            if b != 0.0 {
                for (e, &v) in eta.iter_mut().zip(x.column(j)) {
                    *e += b * (v - c);
                }
            }
        }
        eta
    }
}

/// Loss-minimizing constant: mean for gaussian, clamped log-odds for binomial.
pub fn init_offset(data: &Dataset) -> f64 {
    let n = data.n() as f64;
    let mean = data.y().iter().sum::<f64>() / n;
    match data.family() {
        Family::Gaussian => mean,
        Family::Binomial => {
            let p = mean.clamp(1.0 / (n + 1.0), n / (n + 1.0));
            (p / (1.0 - p)).ln()
        }
    }
}

/// Incremental boosting state over one dataset.
#[derive(Debug, Clone)]
pub struct Booster<'a> {
    data: &'a Dataset,
    design: CenteredDesign,
    eta: Vec<f64>,
    model: BoostModel,
    seen: Vec<bool>,
    distinct: usize,
}

impl<'a> Booster<'a> {
    pub fn new(data: &'a Dataset, config: BoostConfig) -> Result<Self, BoostError> {
        config.validate(data.p())?;
        let design = CenteredDesign::new(data.x());
        if design.n_fittable() == 0 {
            return Err(BoostError::NoFittableBaseLearner);
        }
        let offset = init_offset(data);
        let model = BoostModel {
            offset,
            beta: vec![0.0; data.p()],
            centers: design.means().to_vec(),
            selection_history: Vec::new(),
            m_done: 0,
            family: data.family(),
            config,
        };
        Ok(Booster {
            data,
            eta: vec![offset; data.n()],
            seen: vec![false; data.p()],
            distinct: 0,
            design,
            model,
        })
    }

    pub fn design(&self) -> &CenteredDesign {
        &self.design
    }

    pub fn model(&self) -> &BoostModel {
        &self.model
    }

    pub fn into_model(self) -> BoostModel {
        self.model
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn distinct_selected(&self) -> usize {
        self.distinct
    }

    /// Current empirical risk.
    pub fn risk(&self) -> f64 {
        data::empirical_risk(self.data.family(), self.data.y(), &self.eta)
    }

    /// One boosting iteration; returns the selected base-learner.
    pub fn step(&mut self) -> Result<usize, BoostError> {
        let family = self.data.family();
        let u: Vec<f64> = self
            .data
            .y()
            .iter()
            .zip(&self.eta)
            .map(|(&y, &e)| data::negative_gradient_at(family, y, e))
            .collect();
        let (j, coef) = self
            .design
            .best_fit(&u)
            .ok_or(BoostError::NoFittableBaseLearner)?;
        let nu = self.model.config.nu;
        self.model.beta[j] += nu * coef;
        for (e, &x) in self.eta.iter_mut().zip(self.design.x.column(j)) {
            *e += nu * coef * x;
        }
        self.model.selection_history.push(j);
        self.model.m_done += 1;
        if !self.seen[j] {
            self.seen[j] = true;
            self.distinct += 1;
        }
        Ok(j)
    }
}

/// Stateless single iteration: rebuilds the fit of `model` on `data` and
/// advances it by one step.
pub fn boost_step(
    model: &BoostModel,
    data: &Dataset,
    design: &CenteredDesign,
) -> Result<BoostModel, BoostError> {
    let eta = model.predict_eta(data.x());
    let u = data::negative_gradient(data.family(), data.y(), &eta)
        .map_err(|e| BoostError::InvalidConfig(e.to_string()))?;
    let (j, coef) = design
        .best_fit(&u)
        .ok_or(BoostError::NoFittableBaseLearner)?;
    let mut next = model.clone();
    next.beta[j] += model.config.nu * coef;
    next.selection_history.push(j);
    next.m_done += 1;
    Ok(next)
}

/// Runs exactly `config.m_max` iterations.
pub fn fit(data: &Dataset, config: BoostConfig) -> Result<BoostModel, BoostError> {
    let mut booster = Booster::new(data, config)?;
    for _ in 0..config.m_max {
        booster.step()?;
    }
    Ok(booster.into_model())
}

/// Iterates until `q` distinct base-learners have been selected; the
/// iteration selecting the q-th one is the last.
pub fn fit_until_q(data: &Dataset, config: BoostConfig) -> Result<BoostModel, BoostError> {
    let q = config
        .target_q
        .ok_or_else(|| BoostError::InvalidConfig("target_q must be set".into()))?;
    let mut booster = Booster::new(data, config)?;
    let fittable = booster.design().n_fittable();
    if q > fittable {
        return Err(BoostError::QExceedsFittable { q, fittable });
    }
    while booster.distinct_selected() < q {
        if booster.model().m_done >= config.m_max {
            return Err(BoostError::QNotReached {
                q,
                distinct: booster.distinct_selected(),
                m_max: config.m_max,
            });
        }
        booster.step()?;
    }
    Ok(booster.into_model())
}
