//! Dollar-neutral overlay on a long-only benchmark.
//!
//! The overlay w′ maximizes `Eᵀw′ − (1/γ′)w′ᵀΓ′w′` inside per-stock bounds
//! and linear homogeneous constraints `Qᵀw′ = 0` whose first column is always
//! dollar neutrality. The scale γ′ is then tuned by golden-section search on
//! the Sharpe ratio of the combined portfolio w* + w′.

mod golden;
mod qp;

use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use golden::{best_probe, golden_section_max};
pub use qp::{kkt_certificate, objective, optimize_mvo, KktReport, MvoSolution};

/// A validated overlay optimization problem.
#[derive(Debug, Clone)]
pub struct OverlayProblem {
    e: DVector<f64>,
    gp: DMatrix<f64>,
    w_star: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    q: DMatrix<f64>,
}

impl OverlayProblem {
    /// Checks that `lower ≤ 0 ≤ upper`, `lower ≥ −w*`, Γ′ is positive
    /// definite and Q has full column rank with a leading unit column.
    pub fn new(
        e: DVector<f64>,
        gp: DMatrix<f64>,
        w_star: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        q: DMatrix<f64>,
    ) -> Result<Self> {
        let n = e.len();
        for (what, len) in [
            ("benchmark weights", w_star.len()),
            ("lower bounds", lower.len()),
            ("upper bounds", upper.len()),
            ("constraint rows", q.nrows()),
            ("covariance rows", gp.nrows()),
            ("covariance columns", gp.ncols()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if n < 2 {
            return Err(Error::InsufficientStocks(n));
        }
        if let Some(i) = e.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: i, col: 0 });
        }
        if let Some(i) = w_star.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "benchmark weight {i} is {}, must be positive",
                w_star[i]
            )));
        }
        for i in 0..n {
            let (l, u) = (lower[i], upper[i]);
            // NaN fails every comparison, so test for the valid shape
            let ok = l <= 0.0 && u >= 0.0 && l >= -w_star[i] * (1.0 + 1e-12);
            if !ok {
                return Err(Error::InvalidBounds {
                    index: i,
                    lower: l,
                    upper: u,
                });
            }
        }
        let asym = (&gp - gp.transpose()).amax();
        if !(asym <= 1e-12 * gp.amax()) {
            return Err(Error::SingularCovariance);
        }
        if Cholesky::new(gp.clone()).is_none() {
            return Err(Error::SingularCovariance);
        }
        if q.ncols() == 0 || q.column(0).iter().any(|v| *v != 1.0) {
            return Err(Error::InvalidConfig(
                "first constraint column must be the unit vector".into(),
            ));
        }
        let all: Vec<usize> = (0..n).collect();
        if qp::independent_columns(&q, &all).len() != q.ncols() || q.ncols() >= n {
            return Err(Error::DegenerateConstraints);
        }
        Ok(Self {
            e,
            gp,
            w_star,
            lower,
            upper,
            q,
        })
    }

    pub fn n(&self) -> usize {
        self.e.len()
    }

    pub fn e(&self) -> &DVector<f64> {
        &self.e
    }

    pub fn gp(&self) -> &DMatrix<f64> {
        &self.gp
    }

    pub fn w_star(&self) -> &DVector<f64> {
        &self.w_star
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Sharpe ratio of w* + w′ under Γ′.
    pub fn sharpe(&self, w_prime: &DVector<f64>) -> f64 {
        let w = &self.w_star + w_prime;
        self.e.dot(&w) / w.dot(&(&self.gp * &w)).sqrt()
    }
}

/// Residual of `E` after a no-intercept weighted regression on w*:
/// ε_i = v_i (E_i − w*_i Σ_j v_j E_j w*_j / Σ_j v_j w*_j²).
pub fn residualize(
    e: &DVector<f64>,
    w_star: &DVector<f64>,
    v: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = e.len();
    if w_star.len() != n || v.is_some_and(|v| v.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "residualization inputs",
            expected: n,
            found: w_star.len(),
        });
    }
    let ones = DVector::from_element(n, 1.0);
    let v = v.unwrap_or(&ones);
    let den: f64 = (0..n).map(|i| v[i] * w_star[i] * w_star[i]).sum();
    if !(den > 0.0) {
        return Err(Error::DegenerateRegression);
    }
    let coef = (0..n).map(|i| v[i] * e[i] * w_star[i]).sum::<f64>() / den;
    Ok(DVector::from_fn(n, |i, _| v[i] * (e[i] - w_star[i] * coef)))
}

/// Linear homogeneous constraints on the overlay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    DollarNeutral,
    /// Γ′w* ⟂ w′, so the overlay is uncorrelated with the benchmark.
    ZeroExpectedCorrelation,
    /// w* ⟂ w′.
    OrthogonalToBenchmark,
}

impl ConstraintMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::DollarNeutral => "dollar-neutral",
            ConstraintMode::ZeroExpectedCorrelation => "zero-expected-correlation",
            ConstraintMode::OrthogonalToBenchmark => "orthogonal-to-benchmark",
        }
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dollar-neutral" => Ok(ConstraintMode::DollarNeutral),
            "zero-expected-correlation" => Ok(ConstraintMode::ZeroExpectedCorrelation),
            "orthogonal-to-benchmark" => Ok(ConstraintMode::OrthogonalToBenchmark),
            other => Err(Error::InvalidConfig(format!(
                "unknown constraint mode {other:?}"
            ))),
        }
    }
}

/// Assembles Q: the unit column first, then Γ′w* and/or w* as requested.
pub fn build_constraints(
    modes: &[ConstraintMode],
    gp: &DMatrix<f64>,
    w_star: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = w_star.len();
    let mut cols = vec![DVector::from_element(n, 1.0)];
    if modes.contains(&ConstraintMode::ZeroExpectedCorrelation) {
        cols.push(gp * w_star);
    }
    if modes.contains(&ConstraintMode::OrthogonalToBenchmark) {
        cols.push(w_star.clone());
    }
    let q = DMatrix::from_columns(&cols);
    let all: Vec<usize> = (0..n).collect();
    if qp::independent_columns(&q, &all).len() != q.ncols() || q.ncols() >= n {
        return Err(Error::DegenerateConstraints);
    }
    Ok(q)
}

/// Percentage band `[−z·w*, z·w*]`, with `0 ≤ z ≤ 1` so w* + w′ stays long.
pub fn band_bounds(w_star: &DVector<f64>, z: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidConfig(format!(
            "band width {z} is outside [0, 1]"
        )));
    }
    Ok((w_star * -z, w_star * z))
}

/// Fallback bracket when no bound ever binds along the unbounded ray.
const UNBOUNDED_GAMMA_MAX: f64 = 1.0;

/// 100 times the γ′ at which the first bound binds along the bounds-free
/// solution ray w′ = γ′d.
pub fn default_gamma_max(problem: &OverlayProblem) -> Result<f64> {
    let n = problem.n();
    let q = problem.q();
    let p = q.ncols();
    let mut kkt = DMatrix::<f64>::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(problem.gp());
    kkt.view_mut((0, n), (n, p)).copy_from(q);
    kkt.view_mut((n, 0), (p, n)).copy_from(&q.transpose());
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(problem.e() * 0.5));
    let d = kkt.lu().solve(&rhs).ok_or(Error::DegenerateConstraints)?;
    let mut first = f64::INFINITY;
    for i in 0..n {
        let bound = if d[i] > 0.0 {
            problem.upper()[i]
        } else if d[i] < 0.0 {
            problem.lower()[i]
        } else {
            continue;
        };
        let g = bound / d[i];
        if g > 0.0 && g < first {
            first = g;
        }
    }
    Ok(if first.is_finite() {
        100.0 * first
    } else {
        UNBOUNDED_GAMMA_MAX
    })
}

/// How the tuned γ′ was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneStatus {
    /// Maximum found inside the bracket.
    Interior,
    /// Sharpe ratio still rising at the bracket end; γ′ = γ′_max.
    BracketSaturated,
    /// The overlay is identically zero, so the Sharpe ratio is flat;
    /// γ′ is the bracket midpoint.
    Flat,
    /// No probe beats the benchmark alone; γ′ = 0 and w′ = 0.
    NoImprovement,
}

#[derive(Debug, Clone)]
pub struct OverlayResult {
    pub w_prime: DVector<f64>,
    pub gamma_prime: f64,
    pub gamma_max: f64,
    pub combined: DVector<f64>,
    /// Every evaluated `(γ′, S)` pair, sorted by γ′.
    pub sharpe_curve: Vec<(f64, f64)>,
    pub sharpe_zero: f64,
    pub sharpe_opt: f64,
    pub status: TuneStatus,
    pub at_lower: Vec<usize>,
    pub at_upper: Vec<usize>,
    /// Qᵀw′.
    pub constraint_residuals: DVector<f64>,
    /// Correlation of w′ with w* under Γ′; `None` when w′ = 0.
    pub rho: Option<f64>,
}

/// Golden-section search over `(0, γ′_max]` for the γ′ maximizing the
/// combined Sharpe ratio. `gamma_max = None` uses [`default_gamma_max`].
pub fn tune_gamma(
    problem: &OverlayProblem,
    gamma_max: Option<f64>,
    tol: f64,
) -> Result<OverlayResult> {
    let gmax = match gamma_max {
        Some(g) => g,
        None => default_gamma_max(problem)?,
    };
    if !(gmax > 0.0 && gmax.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "gamma_max must be positive, got {gmax}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let n = problem.n();
    let zero = DVector::zeros(n);
    let s0 = problem.sharpe(&zero);
    let at_max = optimize_mvo(problem, gmax)?;
    let s_max = problem.sharpe(&at_max.w_prime);

    let mut curve = vec![(0.0, s0), (gmax, s_max)];
    let (gamma, status, solution) = if at_max.w_prime.amax() == 0.0 {
        (gmax / 2.0, TuneStatus::Flat, None)
    } else {
        let probes = golden_section_max(
            |g| optimize_mvo(problem, g).map(|s| problem.sharpe(&s.w_prime)),
            0.0,
            gmax,
            tol,
            tol * gmax * 1e-6,
            500,
        )?;
        curve.extend_from_slice(&probes);
        let (g_best, s_best) = best_probe(&probes);
        if s_max > s_best {
            if s0 >= s_max {
                (0.0, TuneStatus::NoImprovement, None)
            } else {
                (gmax, TuneStatus::BracketSaturated, Some(at_max))
            }
        } else if s0 >= s_best {
            (0.0, TuneStatus::NoImprovement, None)
        } else {
            (
                g_best,
                TuneStatus::Interior,
                Some(optimize_mvo(problem, g_best)?),
            )
        }
    };
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (w_prime, at_lower, at_upper) = match solution {
        Some(s) => (s.w_prime, s.at_lower, s.at_upper),
        None => (zero, Vec::new(), Vec::new()),
    };
    let sharpe_opt = problem.sharpe(&w_prime);
    let combined = problem.w_star() + &w_prime;
    let rho = expected_correlation(problem.gp(), problem.w_star(), &w_prime);
    Ok(OverlayResult {
        constraint_residuals: problem.q().tr_mul(&w_prime),
        w_prime,
        gamma_prime: gamma,
        gamma_max: gmax,
        combined,
        sharpe_curve: curve,
        sharpe_zero: s0,
        sharpe_opt,
        status,
        at_lower,
        at_upper,
        rho,
    })
}

fn expected_correlation(
    gp: &DMatrix<f64>,
    w_star: &DVector<f64>,
    w_prime: &DVector<f64>,
) -> Option<f64> {
    let gw = gp * w_prime;
    let var_prime = w_prime.dot(&gw);
    if !(var_prime > 0.0) {
        return None;
    }
    let var_star = w_star.dot(&(gp * w_star));
    Some(w_star.dot(&gw) / (var_star * var_prime).sqrt())
}

#[derive(Debug, Clone)]
pub struct Combination {
    pub weights: DVector<f64>,
    pub sigma_star: f64,
    pub sigma_prime: f64,
    /// `None` when σ′ = 0.
    pub rho: Option<f64>,
}

/// w = w* + w′, rejecting negative holdings and non-neutral overlays.
pub fn combine(
    w_star: &DVector<f64>,
    w_prime: &DVector<f64>,
    gp: &DMatrix<f64>,
) -> Result<Combination> {
    if w_star.len() != w_prime.len() || gp.nrows() != w_star.len() {
        return Err(Error::DimensionMismatch {
            what: "overlay weights",
            expected: w_star.len(),
            found: w_prime.len(),
        });
    }
    let net = w_prime.sum();
    if net.abs() > 1e-10 * w_prime.lp_norm(1).max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "overlay is not dollar-neutral: Σw′ = {net}"
        )));
    }
    let weights = w_star + w_prime;
    if let Some(i) = weights.iter().position(|v| *v < -1e-12) {
        return Err(Error::LongOnlyViolation {
            index: i,
            value: weights[i],
        });
    }
    Ok(Combination {
        sigma_star: w_star.dot(&(gp * w_star)).sqrt(),
        sigma_prime: w_prime.dot(&(gp * w_prime)).sqrt(),
        rho: expected_correlation(gp, w_star, w_prime),
        weights,
    })
}
