//! Sample moments and regression betas.

use nalgebra::{DMatrix, DVector};

use crate::data_model::ReturnsPanel;
use crate::error::{Error, Result};

/// Symmetric N×N covariance matrix with ticker labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let n = tickers.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "covariance matrix",
                expected: n,
                found: values.nrows().max(values.ncols()),
            });
        }
        let scale = values.amax();
        for i in 0..n {
            if !values[(i, i)].is_finite() || values[(i, i)] < 0.0 {
                return Err(Error::InvalidVariance {
                    index: i,
                    value: values[(i, i)],
                });
            }
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::NonFiniteValue { row: i, col: j });
                }
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::InvalidConfig(format!(
                        "covariance matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { tickers, values })
    }

    /// Skips validation; callers guarantee symmetry.
    pub(crate) fn from_parts(tickers: Vec<String>, values: DMatrix<f64>) -> Self {
        Self { tickers, values }
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    /// Total volatilities sqrt(C_ii).
    pub fn sigmas(&self) -> DVector<f64> {
        self.values.diagonal().map(f64::sqrt)
    }
}

/// Intercept, slope and residuals of per-stock serial regressions on a
/// benchmark return series.
#[derive(Debug, Clone)]
pub struct RegressionBetas {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub residuals: DMatrix<f64>,
}

fn demeaned(panel: &ReturnsPanel) -> DMatrix<f64> {
    let mut r = panel.values().clone();
    for mut row in r.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    r
}

/// Unbiased sample covariance of the panel rows (denominator T−1).
pub fn sample_covariance(panel: &ReturnsPanel) -> Result<CovarianceMatrix> {
    let t = panel.t();
    if t < 2 {
        return Err(Error::InsufficientObservations {
            needed: 2,
            found: t,
        });
    }
    let r = demeaned(panel);
    let n = panel.n();
    let denom = (t - 1) as f64;
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = r.row(i).dot(&r.row(j)) / denom;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(CovarianceMatrix::from_parts(panel.tickers().to_vec(), c))
}

/// Regresses every stock's returns on `bench` with an intercept.
pub fn serial_betas(panel: &ReturnsPanel, bench: &DVector<f64>) -> Result<RegressionBetas> {
    let t = panel.t();
    if bench.len() != t {
        return Err(Error::DimensionMismatch {
            what: "benchmark returns",
            expected: t,
            found: bench.len(),
        });
    }
    let f_mean = bench.mean();
    let f_tilde = bench.add_scalar(-f_mean);
    let f_var = f_tilde.norm_squared();
    if !(f_var > 1e-20 * bench.norm_squared()) || f_var == 0.0 {
        return Err(Error::DegenerateBenchmark);
    }
    let n = panel.n();
    let mut alpha = DVector::zeros(n);
    let mut beta = DVector::zeros(n);
    let mut residuals = DMatrix::zeros(n, t);
    for i in 0..n {
        let row = panel.values().row(i);
        let r_mean = row.mean();
        let cov: f64 = row
            .iter()
            .zip(f_tilde.iter())
            .map(|(r, f)| (r - r_mean) * f)
            .sum();
        let b = cov / f_var;
        let a = r_mean - b * f_mean;
        for s in 0..t {
            residuals[(i, s)] = row[s] - a - b * bench[s];
        }
        alpha[i] = a;
        beta[i] = b;
    }
    Ok(RegressionBetas {
        alpha,
        beta,
        residuals,
    })
}

/// Betas implied by holding portfolio `w` under covariance `c`:
/// beta = Cw / (wᵀCw). Also returns the portfolio variance wᵀCw.
pub fn betas_from_weights(c: &CovarianceMatrix, w: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if w.len() != c.n() {
        return Err(Error::DimensionMismatch {
            what: "weights",
            expected: c.n(),
            found: w.len(),
        });
    }
    let cw = c.values() * w;
    let var = w.dot(&cw);
    if !(var > 0.0) {
        return Err(Error::DegeneratePortfolioVariance(var));
    }
    Ok((cw / var, var))
}
