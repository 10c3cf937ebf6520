//! Error bounds for stability selection and the parameter solver.
//!
//! Three bounds on the expected number of falsely selected
//! low-selection-probability variables are provided:
//!
//! * worst case (no distributional assumption), which coincides with the
//!   classical `q^2 / ((2 pi_thr - 1) p)` bound when `theta = q / p`;
//! * unimodality of the simultaneous selection frequencies;
//! * r-concavity of the simultaneous (`r = -1/2`) and marginal
//!   (`r = -1/4`) selection frequencies, via the extremal tail function
//!   [`min_d`].
//!
//! The two distributional bounds are derived for complementary-pairs
//! subsampling and only hold for thresholds on the grid
//! `{1/2 + k/(2B) : k = 2..=B}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("pi_thr = {0} must lie in (0.5, 1]")]
    InvalidThreshold(f64),
    #[error("q = {q} must lie in [1, p = {p}]")]
    InvalidQ { q: usize, p: usize },
    #[error("theta = {0} must lie in (0, 1)")]
    InvalidTheta(f64),
    #[error("unimodal bound requires theta <= 1/sqrt(3), got theta = {0:.6}")]
    ThetaTooLarge(f64),
    #[error(
        "unimodal bound not applicable at this threshold: pi_thr = {pi_thr} <= c_min = {c_min:.6}"
    )]
    BelowCMin { pi_thr: f64, c_min: f64 },
    #[error(
        "pi_thr = {pi_thr} is not on the admissible grid for B = {b}; next grid value is {next}"
    )]
    NotOnGrid { pi_thr: f64, b: usize, next: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("specify exactly two of q, pi_thr and pfer_max ({0})")]
    Specification(String),
}

/// Distributional assumption behind an error bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assumption {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "unimodal")]
    Unimodal,
    #[serde(rename = "r-concave")]
    RConcave,
}

impl Assumption {
    pub const ALL: [Assumption; 3] = [Assumption::None, Assumption::Unimodal, Assumption::RConcave];

    /// Whether the bound is only valid on the complementary-pairs grid.
    pub fn needs_grid(self) -> bool {
        !matches!(self, Assumption::None)
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assumption::None => "none",
            Assumption::Unimodal => "unimodal",
            Assumption::RConcave => "r-concave",
        })
    }
}

impl FromStr for Assumption {
    type Err = BoundError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" | "e1" | "worst-case" => Ok(Assumption::None),
            "unimodal" | "e2" => Ok(Assumption::Unimodal),
            "r-concave" | "rconcave" | "e3" => Ok(Assumption::RConcave),
            other => Err(BoundError::InvalidArgument(format!(
                "unknown assumption `{other}` (expected none, unimodal or r-concave)"
            ))),
        }
    }
}

fn check_threshold(pi_thr: f64) -> Result<(), BoundError> {
    if pi_thr > 0.5 && pi_thr <= 1.0 {
        Ok(())
    } else {
        Err(BoundError::InvalidThreshold(pi_thr))
    }
}

fn check_theta(theta: f64) -> Result<(), BoundError> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(BoundError::InvalidTheta(theta))
    }
}

fn check_q(q: usize, p: usize) -> Result<(), BoundError> {
    if q >= 1 && q <= p {
        Ok(())
    } else {
        Err(BoundError::InvalidQ { q, p })
    }
}

/// Classical bound `q^2 / ((2 pi_thr - 1) p)` under exchangeability.
pub fn pfer_bound_mb(q: usize, p: usize, pi_thr: f64) -> Result<f64, BoundError> {
    check_threshold(pi_thr)?;
    check_q(q, p)?;
    let q = q as f64;
    Ok(q * q / ((2.0 * pi_thr - 1.0) * p as f64))
}

/// Worst-case bound `theta q / (2 pi_thr - 1)`.
pub fn pfer_bound_e1(q: usize, theta: f64, pi_thr: f64) -> Result<f64, BoundError> {
    check_threshold(pi_thr)?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(BoundError::InvalidTheta(theta));
    }
    Ok(theta * q as f64 / (2.0 * pi_thr - 1.0))
}

/// Lower end of the unimodal bound's threshold range.
pub fn c_min(theta: f64, b: usize) -> f64 {
    let t2 = theta * theta;
    (0.5 + t2).min(0.5 + 1.0 / (2.0 * b as f64) + 0.75 * t2)
}

/// Constant of the unimodal bound; the two branches meet (almost) at 3/4.
pub fn c_const(pi_thr: f64, b: usize, theta: f64) -> Result<f64, BoundError> {
    check_threshold(pi_thr)?;
    if b < 1 {
        return Err(BoundError::InvalidArgument("B must be positive".into()));
    }
    if theta > 1.0 / 3f64.sqrt() {
        return Err(BoundError::ThetaTooLarge(theta));
    }
    let bf = b as f64;
    if pi_thr <= 0.75 {
        let cm = c_min(theta, b);
        if pi_thr <= cm {
            return Err(BoundError::BelowCMin { pi_thr, c_min: cm });
        }
        Ok(2.0 * (2.0 * pi_thr - 1.0 - 1.0 / (2.0 * bf)))
    } else {
        Ok((1.0 + 1.0 / bf) / (4.0 * (1.0 - pi_thr + 1.0 / (2.0 * bf))))
    }
}

/// Unimodal bound `theta q / c(pi_thr, B)`.
pub fn pfer_bound_e2(q: usize, theta: f64, pi_thr: f64, b: usize) -> Result<f64, BoundError> {
    check_theta(theta)?;
    Ok(theta * q as f64 / c_const(pi_thr, b, theta)?)
}

/// Result of snapping a threshold onto the complementary-pairs grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridValue {
    pub value: f64,
    /// Grid index `k` in `1/2 + k/(2B)`.
    pub index: usize,
    pub adjusted: bool,
}

fn grid_value(k: usize, b: usize) -> f64 {
    // (B + k) / (2B) rounds once, so e.g. 0.87 prints as 0.87.
    (b + k) as f64 / (2 * b) as f64
}

/// Smallest admissible grid threshold `>= pi_thr`.
pub fn validate_grid(pi_thr: f64, b: usize) -> Result<GridValue, BoundError> {
    check_threshold(pi_thr)?;
    if b < 2 {
        return Err(BoundError::InvalidArgument(format!(
            "B = {b} must be at least 2"
        )));
    }
    let raw = (pi_thr - 0.5) * (2 * b) as f64;
    let k = ((raw - 1e-9).ceil().max(2.0) as usize).min(b);
    let value = grid_value(k, b);
    Ok(GridValue {
        value,
        index: k,
        adjusted: (value - pi_thr).abs() > 1e-12,
    })
}

/// Admissible thresholds, ascending.
pub fn threshold_grid(b: usize) -> Vec<f64> {
    (2..=b).map(|k| grid_value(k, b)).collect()
}

fn require_on_grid(pi_thr: f64, b: usize) -> Result<(), BoundError> {
    let g = validate_grid(pi_thr, b)?;
    if g.adjusted {
        Err(BoundError::NotOnGrid {
            pi_thr,
            b,
            next: g.value,
        })
    } else {
        Ok(())
    }
}

/// Maximal upper-tail probability `P(X >= xi)` over r-concave random
/// variables `X` on `{0, 1/B, ..., 1}` with `E(X) <= theta`.
///
/// Extremal distributions have contiguous support `{lo, ..., k+1}` where
/// `p^r` is affine on `lo..=k` and the last atom carries at most the mass
/// of the affine extension. For each `(lo, k)` the free shape parameter is
/// found by a bracketing grid followed by golden-section refinement; the
/// mass of the last atom is then fixed by the mean budget.
pub fn min_d(xi: f64, theta: f64, b: usize, r: f64) -> Result<f64, BoundError> {
    if r.is_nan() || r >= 0.0 {
        return Err(BoundError::InvalidArgument(format!(
            "r = {r} must be negative"
        )));
    }
    check_theta(theta)?;
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(BoundError::InvalidArgument(format!(
            "xi = {xi} must lie in (0, 1]"
        )));
    }
    if b < 2 {
        return Err(BoundError::InvalidArgument(format!(
            "B = {b} must be at least 2"
        )));
    }
    let t = ((xi * b as f64 - 1e-9).ceil() as usize).clamp(1, b);
    let mu = theta * b as f64;
    // A point mass at t/B is r-concave and has the whole mass in the tail.
    if t as f64 <= mu {
        return Ok(1.0);
    }
    let search = TailSearch {
        t,
        mu,
        b,
        s: 1.0 / r,
    };
    let mut best = 0.0f64;
    let lo_max = (mu.floor() as usize).min(b);
    for lo in 0..=lo_max {
        for k in lo.max(t.saturating_sub(1))..=b {
            best = best.max(search.best_for_shape(lo, k));
        }
    }
    Ok(best.clamp(0.0, 1.0))
}

struct TailSearch {
    t: usize,
    mu: f64,
    b: usize,
    s: f64,
}

/// `g^s`, with integer exponents (`r = -1/2, -1/4`) on the fast path.
#[inline]
fn pow_exp(g: f64, s: f64) -> f64 {
    if s == -2.0 {
        let inv = 1.0 / g;
        inv * inv
    } else if s == -4.0 {
        let inv = 1.0 / g;
        let sq = inv * inv;
        sq * sq
    } else {
        g.powf(s)
    }
}

const SHAPE_GRID: usize = 24;

impl TailSearch {
    /// Tail value for support `lo..=k` (+ one atom at `k+1`) with
    /// `p_{lo+i}^r ∝ 1 + beta i`; `None` if the mean budget is exceeded.
    fn value(&self, lo: usize, k: usize, beta: f64) -> Option<f64> {
        let len = k - lo;
        let (mut w_sum, mut w_mean, mut w_tail) = (0.0, 0.0, 0.0);
        for i in 0..=len {
            let g = 1.0 + beta * i as f64;
            if g <= 0.0 {
                return None;
            }
            let w = pow_exp(g, self.s);
            w_sum += w;
            w_mean += w * i as f64;
            if lo + i >= self.t {
                w_tail += w;
            }
        }
        let mean = lo as f64 + w_mean / w_sum;
        if mean > self.mu * (1.0 + 1e-12) {
            return None;
        }
        let tail = w_tail / w_sum;
        if k == self.b {
            return Some(tail);
        }
        let g_ext = 1.0 + beta * (len + 1) as f64;
        let l_ext = if g_ext <= 0.0 || len == 0 {
            1.0
        } else {
            let e = pow_exp(g_ext, self.s) / w_sum;
            e / (1.0 + e)
        };
        let l_mean = ((self.mu - mean) / ((k + 1) as f64 - mean)).max(0.0);
        let l = l_ext.min(l_mean);
        let top = if k + 1 >= self.t { 1.0 } else { 0.0 };
        Some((1.0 - l) * tail + l * top)
    }

    fn best_for_shape(&self, lo: usize, k: usize) -> f64 {
        let len = k - lo;
        if len == 0 {
            return self.value(lo, k, 0.0).unwrap_or(0.0);
        }
        // beta ranges over (-1/len, inf); u in (0, 1) maps onto it.
        let beta_min = -1.0 / len as f64;
        let beta = |u: f64| beta_min + u / (1.0 - u);
        let eval = |u: f64| self.value(lo, k, beta(u)).unwrap_or(-1.0);

        // Mean decreases in beta: feasible u form an interval [u0, 1).
        const EDGE: f64 = 1e-9;
        let mut u0 = EDGE;
        if eval(u0) < 0.0 {
            if eval(1.0 - EDGE) < 0.0 {
                return 0.0;
            }
            let (mut a, mut c) = (EDGE, 1.0 - EDGE);
            for _ in 0..52 {
                let m = 0.5 * (a + c);
                if eval(m) < 0.0 {
                    a = m;
                } else {
                    c = m;
                }
            }
            u0 = c;
        }
        let hi = 1.0 - EDGE;
        let step = (hi - u0) / (SHAPE_GRID - 1) as f64;
        let mut best_i = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..SHAPE_GRID {
            let v = eval(u0 + step * i as f64);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let mut a = u0 + step * best_i.saturating_sub(1) as f64;
        let mut c = (u0 + step * (best_i + 1) as f64).min(hi);
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let mut x1 = c - INV_PHI * (c - a);
        let mut x2 = a + INV_PHI * (c - a);
        let (mut f1, mut f2) = (eval(x1), eval(x2));
        for _ in 0..48 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (c - a);
                f2 = eval(x2);
            } else {
                c = x2;
                x2 = x1;
                f2 = f1;
                x1 = c - INV_PHI * (c - a);
                f1 = eval(x1);
            }
        }
        best.max(f1).max(f2).max(0.0)
    }
}

/// The two tail terms of the r-concave bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RConcaveTerms {
    /// `D(2 pi_thr - 1; theta^2, B, -1/2)` for the simultaneous frequencies.
    pub simultaneous: f64,
    /// `D(pi_thr; theta, 2B, -1/4)` for the marginal frequencies.
    pub marginal: f64,
}

impl RConcaveTerms {
    pub fn new(theta: f64, pi_thr: f64, b: usize) -> Result<Self, BoundError> {
        check_threshold(pi_thr)?;
        check_theta(theta)?;
        Ok(RConcaveTerms {
            simultaneous: min_d(2.0 * pi_thr - 1.0, theta * theta, b, -0.5)?,
            marginal: min_d(pi_thr, theta, 2 * b, -0.25)?,
        })
    }

    pub fn factor(&self) -> f64 {
        self.simultaneous.min(self.marginal).min(1.0)
    }

    /// Bound in terms of the number of low-selection-probability variables.
    pub fn bound_given_low(&self, l_theta: usize) -> f64 {
        self.factor() * l_theta as f64
    }
}

/// r-concave bound `min{D(2 pi - 1; theta^2, B, -1/2), D(pi; theta, 2B, -1/4)} p`.
pub fn pfer_bound_e3(p: usize, theta: f64, pi_thr: f64, b: usize) -> Result<f64, BoundError> {
    Ok(RConcaveTerms::new(theta, pi_thr, b)?.bound_given_low(p))
}

/// Symbols of a bound evaluation. `theta` defaults to `q / p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInput {
    pub q: usize,
    pub p: usize,
    pub pi_thr: f64,
    pub b: usize,
    pub theta: Option<f64>,
    pub assumption: Assumption,
}

impl BoundInput {
    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or(self.q as f64 / self.p as f64)
    }

    /// Evaluates the bound belonging to `assumption`. Thresholds must be on
    /// the grid for the distributional bounds.
    pub fn evaluate(&self) -> Result<f64, BoundError> {
        check_q(self.q, self.p)?;
        check_threshold(self.pi_thr)?;
        let theta = self.theta();
        match self.assumption {
            Assumption::None => pfer_bound_e1(self.q, theta, self.pi_thr),
            Assumption::Unimodal => {
                require_on_grid(self.pi_thr, self.b)?;
                pfer_bound_e2(self.q, theta, self.pi_thr, self.b)
            }
            Assumption::RConcave => {
                require_on_grid(self.pi_thr, self.b)?;
                pfer_bound_e3(self.p, theta, self.pi_thr, self.b)
            }
        }
    }
}

/// Realized bound at `(q, pi_thr)` with `theta = q / p`.
pub fn realized_bound(
    q: usize,
    p: usize,
    pi_thr: f64,
    b: usize,
    assumption: Assumption,
) -> Result<f64, BoundError> {
    BoundInput {
        q,
        p,
        pi_thr,
        b,
        theta: None,
        assumption,
    }
    .evaluate()
}

/// Two of `q`, `pi_thr`, `pfer_max` plus the problem size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamRequest {
    pub q: Option<usize>,
    pub pi_thr: Option<f64>,
    pub pfer_max: Option<f64>,
    pub p: usize,
    pub b: usize,
    pub assumption: Option<Assumption>,
}

/// Complete parameter triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedParams {
    pub q: usize,
    pub pi_thr: f64,
    pub pfer_max: f64,
    pub realized_bound: f64,
    pub assumption: Assumption,
    #[serde(rename = "B")]
    pub b: usize,
    pub p: usize,
    pub attainable: bool,
    pub warnings: Vec<String>,
}

impl SolvedParams {
    /// Per-comparison error rate implied by the bound.
    pub fn pcer_bound(&self) -> f64 {
        let pcer = self.realized_bound / self.p as f64;
        debug_assert!(pcer <= self.realized_bound);
        pcer
    }
}

const PFER_SLACK: f64 = 1e-12;

/// Solves for the missing member of `(q, pi_thr, pfer_max)` assuming
/// equality in the chosen bound, rounding conservatively: thresholds up to
/// the grid, `q` down to an integer.
pub fn solve_params(req: &ParamRequest) -> Result<SolvedParams, BoundError> {
    let assumption = req.assumption.unwrap_or(Assumption::None);
    let (p, b) = (req.p, req.b);
    if p < 1 {
        return Err(BoundError::InvalidArgument("p must be positive".into()));
    }
    if b < 2 {
        return Err(BoundError::InvalidArgument(format!(
            "B = {b} must be at least 2"
        )));
    }
    let given = [
        req.q.is_some(),
        req.pi_thr.is_some(),
        req.pfer_max.is_some(),
    ];
    match given.iter().filter(|&&g| g).count() {
        2 => {}
        n => {
            return Err(BoundError::Specification(format!(
                "{n} given: {}",
                if n < 2 {
                    "under-specified"
                } else {
                    "over-specified"
                }
            )))
        }
    }
    if let Some(q) = req.q {
        check_q(q, p)?;
    }
    if let Some(pfer) = req.pfer_max {
        if !(pfer > 0.0 && pfer.is_finite()) {
            return Err(BoundError::InvalidArgument(format!(
                "pfer_max = {pfer} must be positive"
            )));
        }
    }
    let mut warnings = Vec::new();
    let pi_thr = match req.pi_thr {
        Some(pi) => {
            check_threshold(pi)?;
            if assumption.needs_grid() {
                let g = validate_grid(pi, b)?;
                if g.adjusted {
                    warnings.push(format!(
                        "pi_thr adjusted from {pi} to grid value {} (B = {b})",
                        g.value
                    ));
                }
                Some(g.value)
            } else {
                Some(pi)
            }
        }
        None => None,
    };
    let bound_at = |q: usize, pi: f64| realized_bound(q, p, pi, b, assumption);

    let (q, pi_thr, pfer_max, realized, attainable) = match (req.q, pi_thr, req.pfer_max) {
        (Some(q), Some(pi), None) => {
            let bound = bound_at(q, pi)?;
            (q, pi, bound, bound, true)
        }
        (Some(q), None, Some(pfer)) => {
            let pi = solve_threshold(q, p, b, assumption, pfer)?;
            match pi {
                Some(pi) => (q, pi, pfer, bound_at(q, pi)?, true),
                None => (q, 1.0, pfer, bound_at(q, 1.0)?, false),
            }
        }
        (None, Some(pi), Some(pfer)) => match solve_q(p, b, pi, assumption, pfer)? {
            Some(q) => (q, pi, pfer, bound_at(q, pi)?, true),
            None => (1, pi, pfer, bound_at(1, pi)?, false),
        },
        _ => unreachable!("exactly two parameters are present"),
    };
    if q > p {
        return Err(BoundError::InvalidQ { q, p });
    }
    if !attainable {
        warnings.push(format!(
            "bound not attainable; realized PFER bound = {realized}"
        ));
    }
    Ok(SolvedParams {
        q,
        pi_thr,
        pfer_max,
        realized_bound: realized,
        assumption,
        b,
        p,
        attainable,
        warnings,
    })
}

/// Smallest admissible threshold meeting `pfer`, or `None` if even
/// `pi_thr = 1` does not.
fn solve_threshold(
    q: usize,
    p: usize,
    b: usize,
    assumption: Assumption,
    pfer: f64,
) -> Result<Option<f64>, BoundError> {
    let theta = q as f64 / p as f64;
    match assumption {
        Assumption::None => {
            let pi = (q as f64 * theta / pfer + 1.0) / 2.0;
            Ok((pi <= 1.0).then_some(pi))
        }
        Assumption::Unimodal => {
            if theta > 1.0 / 3f64.sqrt() {
                return Err(BoundError::ThetaTooLarge(theta));
            }
            for pi in threshold_grid(b) {
                match pfer_bound_e2(q, theta, pi, b) {
                    Ok(bound) if bound <= pfer + PFER_SLACK => return Ok(Some(pi)),
                    Ok(_) | Err(BoundError::BelowCMin { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(None)
        }
        Assumption::RConcave => {
            check_theta(theta)?;
            let grid = threshold_grid(b);
            let meets = |pi: f64| -> Result<bool, BoundError> {
                Ok(pfer_bound_e3(p, theta, pi, b)? <= pfer + PFER_SLACK)
            };
            if !meets(1.0)? {
                return Ok(None);
            }
            // The bound decreases in pi_thr: bisect for the first success.
            let (mut lo, mut hi) = (0usize, grid.len() - 1);
            if meets(grid[lo])? {
                return Ok(Some(grid[lo]));
            }
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if meets(grid[mid])? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(Some(grid[hi]))
        }
    }
}

/// Largest `q` meeting `pfer` at threshold `pi`, or `None` if `q = 1`
/// already fails.
fn solve_q(
    p: usize,
    b: usize,
    pi: f64,
    assumption: Assumption,
    pfer: f64,
) -> Result<Option<usize>, BoundError> {
    let meets = |q: usize| -> Result<bool, BoundError> {
        match realized_bound(q, p, pi, b, assumption) {
            Ok(bound) => Ok(bound <= pfer + PFER_SLACK),
            Err(
                BoundError::BelowCMin { .. }
                | BoundError::ThetaTooLarge(_)
                | BoundError::InvalidTheta(_),
            ) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if !meets(1)? {
        return Ok(None);
    }
    let mut q = match assumption {
        Assumption::None => {
            let est = (pfer * (2.0 * pi - 1.0) * p as f64).sqrt().floor() as usize;
            est.clamp(1, p)
        }
        _ => {
            // Bounds grow with q: bisect on [1, p].
            let (mut lo, mut hi) = (1usize, p);
            if meets(hi)? {
                return Ok(Some(hi));
            }
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if meets(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    // Guard the closed form against rounding at the boundary.
    while q > 1 && !meets(q)? {
        q -= 1;
    }
    while q < p && meets(q + 1)? {
        q += 1;
    }
    Ok(Some(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mb_examples() {
        assert!(close(pfer_bound_mb(10, 100, 0.6).unwrap(), 5.0, 1e-12));
        assert!(close(
            pfer_bound_mb(10, 57, 1.0).unwrap(),
            100.0 / 57.0,
            1e-12
        ));
        assert!(close(pfer_bound_mb(40, 40, 1.0).unwrap(), 40.0, 1e-12));
        assert!(pfer_bound_mb(10, 100, 0.5).is_err());
        assert!(pfer_bound_mb(11, 10, 0.9).is_err());
    }

    #[test]
    fn e1_examples() {
        let e1 = pfer_bound_e1(10, 0.1, 0.6).unwrap();
        assert!(close(e1, 5.0, 1e-12));
        assert!(close(e1, pfer_bound_mb(10, 100, 0.6).unwrap(), 1e-12));
        assert!(close(pfer_bound_e1(10, 0.1, 0.75).unwrap(), 2.0, 1e-12));
        assert!(pfer_bound_e1(10, 1e-12, 0.75).unwrap() < 1e-9);
        assert!(pfer_bound_e1(10, 0.1, 0.4).is_err());
    }

    #[test]
    fn c_const_examples() {
        assert!(close(c_const(0.75, 50, 0.1).unwrap(), 0.98, 1e-12));
        assert!(close(c_const(0.9, 50, 0.1).unwrap(), 1.02 / 0.44, 1e-12));
        assert!(close(c_const(0.9, 50, 0.1).unwrap(), 2.318_18, 1e-5));
    }

    #[test]
    fn c_const_jump_at_three_quarters() {
        // First branch at 3/4: 2 (1/2 - 1/(2B)) = 0.98; the second branch
        // evaluated at 3/4 gives (1 + 1/B) / (4 (1/4 + 1/(2B))) = 1.02 / 1.04.
        let left = c_const(0.75, 50, 0.1).unwrap();
        let right_limit = (1.0 + 1.0 / 50.0) / (4.0 * (0.25 + 1.0 / 100.0));
        assert!(close(left, 0.98, 1e-12));
        assert!(close(right_limit, 0.980_769_230_769_230_8, 1e-12));
        assert!(close(right_limit - left, 0.000_769_230_769_230_8, 1e-12));
        assert!(c_const(0.75 + 1e-9, 50, 0.1).unwrap() > left);
    }

    #[test]
    fn c_const_errors() {
        // c_min(0.1, 50) = min(0.51, 0.5175) = 0.51
        assert!(close(c_min(0.1, 50), 0.51, 1e-12));
        assert!(matches!(
            c_const(0.51, 50, 0.1),
            Err(BoundError::BelowCMin { .. })
        ));
        assert!(c_const(0.52, 50, 0.1).is_ok());
        assert!(matches!(
            c_const(0.9, 50, 0.6),
            Err(BoundError::ThetaTooLarge(_))
        ));
    }

    #[test]
    fn e2_examples() {
        assert!(close(
            pfer_bound_e2(10, 0.1, 0.75, 50).unwrap(),
            1.0 / 0.98,
            1e-12
        ));
        assert!(close(
            pfer_bound_e2(10, 0.1, 0.9, 50).unwrap(),
            0.431_37,
            1e-5
        ));
    }

    #[test]
    fn e2_below_e1_on_grid() {
        for pi in threshold_grid(50) {
            for q in 1..=20 {
                let theta = q as f64 / 100.0;
                if let Ok(e2) = pfer_bound_e2(q, theta, pi, 50) {
                    assert!(
                        e2 <= pfer_bound_e1(q, theta, pi).unwrap() + 1e-12,
                        "q={q} pi={pi}"
                    );
                }
            }
        }
    }

    #[test]
    fn grid_examples() {
        let g = validate_grid(0.6, 50).unwrap();
        assert_eq!(g.value, 0.6);
        assert!(!g.adjusted);
        let g = validate_grid(0.601, 50).unwrap();
        assert_eq!(g.value, 0.61);
        assert!(g.adjusted);
        assert_eq!(validate_grid(0.505, 100).unwrap().value, 0.51);
        assert_eq!(validate_grid(1.0, 50).unwrap().value, 1.0);
        assert_eq!(validate_grid(0.87, 50).unwrap().value, 0.87);
        let grid = threshold_grid(50);
        assert_eq!(grid.len(), 49);
        assert_eq!(grid[0], 0.52);
        assert!(validate_grid(0.5, 50).is_err());
    }

    #[test]
    fn min_d_trivial_and_errors() {
        // ceil(0.2 * 10) / 10 = 0.2 <= theta: point mass at 0.2.
        assert_eq!(min_d(0.2, 0.25, 10, -0.5).unwrap(), 1.0);
        assert_eq!(min_d(0.3, 0.3, 10, -0.25).unwrap(), 1.0);
        assert!(min_d(0.5, 0.0, 10, -0.5).is_err());
        assert!(min_d(1.1, 0.2, 10, -0.5).is_err());
        assert!(min_d(0.5, 0.2, 10, 0.5).is_err());
        assert!(min_d(0.5, 0.2, 1, -0.5).is_err());
    }

    #[test]
    fn min_d_monotone_spot_check() {
        let a = min_d(0.9, 0.1, 50, -0.5).unwrap();
        let b = min_d(1.0, 0.1, 50, -0.5).unwrap();
        assert!(a >= b);
        assert!(b > 0.0 && a < 1.0);
    }

    #[test]
    fn min_d_beats_markov() {
        // Markov gives P(X >= xi) <= theta / xi; r-concavity is stronger.
        for &(xi, theta) in &[(0.5, 0.1), (0.8, 0.2), (1.0, 0.05)] {
            let d = min_d(xi, theta, 20, -0.5).unwrap();
            assert!(d <= theta / xi + 1e-12);
        }
    }

    #[test]
    fn e3_degenerates_to_p() {
        // theta = 0.6: both tails trivially reach 1 at pi_thr = 0.52, B = 50.
        let terms = RConcaveTerms::new(0.6, 0.52, 50).unwrap();
        assert_eq!(terms.simultaneous, 1.0);
        assert_eq!(terms.marginal, 1.0);
        assert_eq!(pfer_bound_e3(57, 0.6, 0.52, 50).unwrap(), 57.0);
    }

    #[test]
    fn e3_ordering_example() {
        let e1 = pfer_bound_e1(10, 0.1, 0.9).unwrap();
        let e2 = pfer_bound_e2(10, 0.1, 0.9, 50).unwrap();
        let e3 = pfer_bound_e3(100, 0.1, 0.9, 50).unwrap();
        assert!(e3 <= e2 && e2 <= e1, "{e3} {e2} {e1}");
    }

    #[test]
    fn e3_case_study_threshold() {
        let e3 = pfer_bound_e3(57, 10.0 / 57.0, 0.69, 50).unwrap();
        assert!(e3 <= 1.0, "{e3}");
        assert!(pfer_bound_e3(57, 10.0 / 57.0, 0.68, 50).unwrap() > 1.0);
    }

    #[test]
    fn bound_input_requires_grid() {
        let input = BoundInput {
            q: 10,
            p: 100,
            pi_thr: 0.601,
            b: 50,
            theta: None,
            assumption: Assumption::Unimodal,
        };
        assert!(matches!(
            input.evaluate(),
            Err(BoundError::NotOnGrid { .. })
        ));
        let none = BoundInput {
            assumption: Assumption::None,
            ..input
        };
        assert!(close(
            none.evaluate().unwrap(),
            100.0 / (0.202 * 100.0),
            1e-12
        ));
    }

    fn request(
        q: Option<usize>,
        pi: Option<f64>,
        pfer: Option<f64>,
        a: Assumption,
    ) -> ParamRequest {
        ParamRequest {
            q,
            pi_thr: pi,
            pfer_max: pfer,
            p: 57,
            b: 50,
            assumption: Some(a),
        }
    }

    #[test]
    fn solve_case_study() {
        let uni = solve_params(&request(Some(10), None, Some(1.0), Assumption::Unimodal)).unwrap();
        assert_eq!(uni.pi_thr, 0.87);
        assert!(uni.attainable && uni.realized_bound <= 1.0);
        let rc = solve_params(&request(Some(10), None, Some(1.0), Assumption::RConcave)).unwrap();
        assert_eq!(rc.pi_thr, 0.69);
        let none = solve_params(&request(Some(10), None, Some(1.0), Assumption::None)).unwrap();
        assert_eq!(none.pi_thr, 1.0);
        assert!(!none.attainable);
        assert!(none.warnings[0].starts_with("bound not attainable"));
        assert!(close(none.realized_bound, 100.0 / 57.0, 1e-12));
    }

    #[test]
    fn solve_specification_errors() {
        assert!(matches!(
            solve_params(&request(Some(10), Some(0.9), Some(1.0), Assumption::None)),
            Err(BoundError::Specification(_))
        ));
        assert!(matches!(
            solve_params(&request(Some(10), None, None, Assumption::None)),
            Err(BoundError::Specification(_))
        ));
        assert!(solve_params(&request(Some(58), None, Some(1.0), Assumption::None)).is_err());
    }

    #[test]
    fn solve_q_and_pfer() {
        let mut req = request(None, Some(0.6), Some(1.0), Assumption::None);
        req.p = 100;
        // floor(sqrt(1 * 0.2 * 100)) = 4
        let s = solve_params(&req).unwrap();
        assert_eq!(s.q, 4);
        assert!(s.realized_bound <= 1.0);
        let s = solve_params(&request(Some(10), Some(0.9), None, Assumption::Unimodal)).unwrap();
        assert!(close(
            s.pfer_max,
            pfer_bound_e2(10, 10.0 / 57.0, 0.9, 50).unwrap(),
            1e-12
        ));
        let s = solve_params(&request(Some(10), Some(0.601), None, Assumption::Unimodal)).unwrap();
        assert_eq!(s.pi_thr, 0.61);
        assert!(s.warnings[0].contains("adjusted"));
    }

    #[test]
    fn solve_q_unattainable() {
        let mut req = request(None, Some(0.6), Some(0.001), Assumption::None);
        req.p = 100;
        let s = solve_params(&req).unwrap();
        assert_eq!(s.q, 1);
        assert!(!s.attainable);
    }

    #[test]
    fn assumption_parsing() {
        assert_eq!(
            "r-concave".parse::<Assumption>().unwrap(),
            Assumption::RConcave
        );
        assert_eq!(
            "r_concave".parse::<Assumption>().unwrap(),
            Assumption::RConcave
        );
        assert_eq!("E2".parse::<Assumption>().unwrap(), Assumption::Unimodal);
        assert!("log-concave".parse::<Assumption>().is_err());
    }
}
