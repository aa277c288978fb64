//! Primal active-set solver for the bounded, equality-constrained overlay
//! quadratic, plus an independent KKT check of its output.
//!
//! The solver works in the scaled form
//! `maximize (γ/2)Eᵀw − ½wᵀΓw` (the objective times γ/2), whose stationarity
//! condition on the free set is `(γ/2)E − Γw = Qν`.

use nalgebra::{DMatrix, DVector};

use super::OverlayProblem;
use crate::error::{Error, Result};

/// Relative tolerance for releasing a bound from the working set.
const RELEASE_TOL: f64 = 1e-12;
/// Column-independence threshold after normalization.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MvoSolution {
    pub w_prime: DVector<f64>,
    /// One multiplier per column of Q, in the unscaled objective's units.
    pub multipliers: DVector<f64>,
    pub at_lower: Vec<usize>,
    pub at_upper: Vec<usize>,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Free,
    Lower,
    Upper,
    Pinned,
}

/// Indices of a maximal set of linearly independent columns of `q`
/// restricted to `rows`, chosen greedily left to right.
pub(crate) fn independent_columns(q: &DMatrix<f64>, rows: &[usize]) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for c in 0..q.ncols() {
        let mut v = DVector::from_fn(rows.len(), |k, _| q[(rows[k], c)]);
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        v /= norm;
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        let rest = v.norm();
        if rest > RANK_TOL {
            basis.push(v / rest);
            keep.push(c);
        }
    }
    keep
}

/// Maximizes `Eᵀw − (1/γ′)wᵀΓ′w` subject to the problem's bounds and
/// `Qᵀw = 0`, starting from the feasible point `w = 0`.
pub fn optimize_mvo(problem: &OverlayProblem, gamma_prime: f64) -> Result<MvoSolution> {
    if !(gamma_prime > 0.0 && gamma_prime.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "risk-aversion scale must be positive, got {gamma_prime}"
        )));
    }
    let n = problem.n();
    let g = problem.gp();
    let q = problem.q();
    let (lo, hi) = (problem.lower(), problem.upper());
    let target = problem.e() * (0.5 * gamma_prime);

    let mut state: Vec<State> = (0..n)
        .map(|i| {
            if lo[i] == hi[i] {
                State::Pinned
            } else {
                State::Free
            }
        })
        .collect();
    let movable: Vec<usize> = (0..n).filter(|&i| state[i] != State::Pinned).collect();
    let cols = independent_columns(q, &movable);
    let qr = q.select_columns(cols.iter());
    let p = qr.ncols();

    let mut w = DVector::<f64>::zeros(n);
    let max_iter = 50 * (n + p) + 100;
    for iter in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == State::Free).collect();
        let fixed: Vec<usize> = (0..n).filter(|&i| state[i] != State::Free).collect();
        let m = free.len();

        // KKT system on the free set; fixed coordinates enter the right side
        let mut kkt = DMatrix::<f64>::zeros(m + p, m + p);
        let mut rhs = DVector::<f64>::zeros(m + p);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = g[(i, j)];
            }
            for c in 0..p {
                kkt[(a, m + c)] = qr[(i, c)];
                kkt[(m + c, a)] = qr[(i, c)];
            }
            rhs[a] = target[i] - fixed.iter().map(|&j| g[(i, j)] * w[j]).sum::<f64>();
        }
        for c in 0..p {
            rhs[m + c] = -fixed.iter().map(|&j| qr[(j, c)] * w[j]).sum::<f64>();
        }
        let sol = if m + p == 0 {
            DVector::zeros(0)
        } else {
            kkt.lu().solve(&rhs).ok_or(Error::DegenerateConstraints)?
        };
        let nu = sol.rows(m, p).into_owned();

        // ratio test toward the equality-constrained optimum
        let mut alpha = 1.0;
        let mut blocking: Option<(usize, State)> = None;
        for (a, &i) in free.iter().enumerate() {
            let step = sol[a] - w[i];
            let (limit, side) = if step > 0.0 {
                ((hi[i] - w[i]) / step, State::Upper)
            } else if step < 0.0 {
                ((lo[i] - w[i]) / step, State::Lower)
            } else {
                continue;
            };
            if limit < alpha {
                alpha = limit.max(0.0);
                blocking = Some((i, side));
            }
        }
        for (a, &i) in free.iter().enumerate() {
            w[i] += alpha * (sol[a] - w[i]);
        }
        if let Some((i, side)) = blocking {
            w[i] = if side == State::Upper { hi[i] } else { lo[i] };
            state[i] = side;
            continue;
        }

        // at the working-set optimum: release the worst-signed bound, if any
        let resid = &target - g * &w - &qr * &nu;
        let scale = target.amax().max((g * &w).amax()).max(f64::MIN_POSITIVE);
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let violation = match state[i] {
                State::Upper => -resid[i],
                State::Lower => resid[i],
                _ => continue,
            };
            if violation > RELEASE_TOL * scale && worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((i, violation));
            }
        }
        match worst {
            Some((i, _)) => state[i] = State::Free,
            None => {
                let mut multipliers = DVector::zeros(q.ncols());
                for (k, &c) in cols.iter().enumerate() {
                    // unscale: ∇g = (2/γ′)·(scaled gradient)
                    multipliers[c] = nu[k] * 2.0 / gamma_prime;
                }
                return Ok(MvoSolution {
                    w_prime: w,
                    multipliers,
                    at_lower: (0..n).filter(|&i| state[i] == State::Lower).collect(),
                    at_upper: (0..n).filter(|&i| state[i] == State::Upper).collect(),
                    iterations: iter + 1,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last: w.iter().copied().collect(),
    })
}

/// Objective value `Eᵀw − (1/γ′)wᵀΓ′w`.
pub fn objective(problem: &OverlayProblem, gamma_prime: f64, w: &DVector<f64>) -> f64 {
    problem.e().dot(w) - w.dot(&(problem.gp() * w)) / gamma_prime
}

/// Outcome of [`kkt_certificate`]. Feasibility residuals are relative to the
/// weight scale; stationarity and sign residuals to the gradient scale
/// `max(|E|∞, |(2/γ′)Γ′w|∞)`.
#[derive(Debug, Clone)]
pub struct KktReport {
    pub bound_violation: f64,
    pub equality_residual: f64,
    pub stationarity_residual: f64,
    pub sign_violation: f64,
    pub passed: bool,
}

/// Checks first-order optimality of `w` from scratch: feasibility, free-set
/// gradient in the span of Q, and correctly signed gradients at active
/// bounds. Multipliers are refit by least squares on the free set; the
/// supplied ones are used only when the free rows of Q are rank deficient.
pub fn kkt_certificate(
    problem: &OverlayProblem,
    gamma_prime: f64,
    w: &DVector<f64>,
    fallback_multipliers: Option<&DVector<f64>>,
    tol: f64,
) -> KktReport {
    let n = problem.n();
    let q = problem.q();
    let (lo, hi) = (problem.lower(), problem.upper());
    let curvature = problem.gp() * w * (2.0 / gamma_prime);
    let grad = problem.e() - &curvature;
    let scale = problem
        .e()
        .amax()
        .max(curvature.amax())
        .max(f64::MIN_POSITIVE);
    let wscale = w
        .amax()
        .max(
            lo.iter()
                .chain(hi.iter())
                .filter(|v| v.is_finite())
                .fold(0.0, |m, v| m.max(v.abs())),
        )
        .max(f64::MIN_POSITIVE);

    let mut bound_violation: f64 = 0.0;
    for i in 0..n {
        bound_violation = bound_violation.max(lo[i] - w[i]).max(w[i] - hi[i]);
    }
    let bound_violation = bound_violation.max(0.0) / wscale;
    let equality_residual = (q.tr_mul(w)).amax() / wscale;

    let snap = 1e-12 * wscale;
    let at_lower = |i: usize| w[i] - lo[i] <= snap;
    let at_upper = |i: usize| hi[i] - w[i] <= snap;
    let free: Vec<usize> = (0..n).filter(|&i| !at_lower(i) && !at_upper(i)).collect();

    let cols = independent_columns(q, &free);
    let mu = if cols.len() == q.ncols() && !free.is_empty() {
        let qf = DMatrix::from_fn(free.len(), q.ncols(), |a, c| q[(free[a], c)]);
        let gf = DVector::from_fn(free.len(), |a, _| grad[free[a]]);
        qf.svd(true, true)
            .solve(&gf, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(q.ncols()))
    } else {
        fallback_multipliers
            .cloned()
            .unwrap_or_else(|| DVector::zeros(q.ncols()))
    };
    let resid = &grad - q * &mu;
    let stationarity_residual = free.iter().map(|&i| resid[i].abs()).fold(0.0, f64::max) / scale;
    let mut sign_violation: f64 = 0.0;
    for i in 0..n {
        if at_lower(i) && at_upper(i) {
            continue;
        }
        if at_upper(i) {
            sign_violation = sign_violation.max(-resid[i]);
        } else if at_lower(i) {
            sign_violation = sign_violation.max(resid[i]);
        }
    }
    let sign_violation = sign_violation / scale;
    let passed = bound_violation <= tol
        && equality_residual <= tol
        && stationarity_residual <= tol
        && sign_violation <= tol;
    KktReport {
        bound_violation,
        equality_residual,
        stationarity_residual,
        sign_violation,
        passed,
    }
}
