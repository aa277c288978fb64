//! Long-only benchmark weights.
//!
//! [`benchmark_weights`] evaluates the closed-form product over the levels of
//! a fitted [`RussianDollModel`]: within a level-1 cluster weights are
//! proportional to β_i/ξ_i², and each cluster is scaled by
//! `Π_ℓ 1/(1 + ζ²Λ)` along its chain of ancestors. No matrix is inverted.
//! [`benchmark_weights_oracle`] and [`general_factor_weights`] compute the same
//! quantity the long way and exist to cross-check it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{BetaVector, ReturnsPanel};
use crate::error::{Error, Result};
use crate::risk_model::RussianDollModel;
use crate::stats::{sample_covariance, serial_betas, CovarianceMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    /// Weights normalized so that Σ w_i β_i = 1.
    pub weights: DVector<f64>,
    /// Benchmark variance σ_F² = 1/(βᵀΓ⁻¹β).
    pub sigma_f2: f64,
    /// Cluster factors γ, one per level-1 cluster.
    pub gamma: Vec<f64>,
    /// Λ^(ℓ) for ℓ = 1..=P+1.
    pub lambda: Vec<Vec<f64>>,
}

impl BenchmarkResult {
    /// Weights rescaled to sum to one.
    pub fn unit_sum_weights(&self) -> DVector<f64> {
        &self.weights / self.weights.sum()
    }
}

/// Benchmark weights of a fitted nested model via the level product formula.
pub fn benchmark_weights(model: &RussianDollModel) -> Result<BenchmarkResult> {
    let tree = model.tree();
    let p = model.depth();
    let beta = model.beta().as_slice();
    let xi2 = model.xi2();

    let g0 = tree.level(1).parent();
    let mut lambda: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    let mut l1 = vec![0.0; tree.n_clusters(1)];
    for (i, &a) in g0.iter().enumerate() {
        l1[a] += beta[i] * beta[i] / xi2[i];
    }
    lambda.push(l1);

    // discount[l-1][a] = 1 / (1 + ζ²Λ) for level-l cluster a
    let mut discount: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    for l in 1..=p {
        let cur = &lambda[l - 1];
        let zeta2 = model.zeta2(l);
        let d: Vec<f64> = cur
            .iter()
            .zip(zeta2)
            .map(|(lam, z)| 1.0 / (1.0 + z * lam))
            .collect();
        let chi2 = model.chi(l) * model.chi(l);
        let (k_next, parent): (usize, Vec<usize>) = if l < p {
            (tree.n_clusters(l + 1), tree.level(l + 1).parent().to_vec())
        } else {
            (1, vec![0; cur.len()])
        };
        let mut next = vec![0.0; k_next];
        for (a, &up) in parent.iter().enumerate() {
            next[up] += chi2 * cur[a] * d[a];
        }
        discount.push(d);
        lambda.push(next);
    }
    let top = 1.0 / (1.0 + model.top_var() * lambda[p][0]);

    let gamma: Vec<f64> = (0..tree.n_clusters(1))
        .map(|a| {
            tree.ancestors(a)
                .iter()
                .enumerate()
                .map(|(l, &c)| discount[l][c])
                .product::<f64>()
                * top
        })
        .collect();
    if let Some(g) = gamma.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::DegenerateModel(format!(
            "cluster factor {g} is not positive"
        )));
    }

    let inv_sigma2: f64 = lambda[0].iter().zip(&gamma).map(|(l, g)| l * g).sum();
    if !(inv_sigma2 > 0.0 && inv_sigma2.is_finite()) {
        return Err(Error::DegenerateModel(format!(
            "inverse benchmark variance is {inv_sigma2}"
        )));
    }
    let sigma_f2 = 1.0 / inv_sigma2;
    let mut weights =
        DVector::from_fn(model.n(), |i, _| sigma_f2 * beta[i] / xi2[i] * gamma[g0[i]]);
    let norm = weights.dot(&model.beta().to_dvector());
    weights /= norm;
    Ok(BenchmarkResult {
        weights,
        sigma_f2,
        gamma,
        lambda,
    })
}

/// Dense route: w = σ_F² Γ⁻¹β with σ_F² = 1/(βᵀΓ⁻¹β).
pub fn benchmark_weights_oracle(
    gamma: &CovarianceMatrix,
    beta: &BetaVector,
) -> Result<(DVector<f64>, f64)> {
    if beta.len() != gamma.n() {
        return Err(Error::DimensionMismatch {
            what: "betas",
            expected: gamma.n(),
            found: beta.len(),
        });
    }
    let chol = Cholesky::new(gamma.values().clone()).ok_or(Error::SingularCovariance)?;
    let b = beta.to_dvector();
    let x = chol.solve(&b);
    let denom = b.dot(&x);
    if !(denom > 0.0) {
        return Err(Error::SingularCovariance);
    }
    let sigma_f2 = 1.0 / denom;
    Ok((x * sigma_f2, sigma_f2))
}

/// Weights under a generic factor model Γ = diag(ξ²) + Ω φ Ωᵀ, with the
/// intermediates of the low-rank inverse.
#[derive(Debug, Clone)]
pub struct GeneralFactorWeights {
    pub weights: DVector<f64>,
    pub sigma_f2: f64,
    /// Λ_A = Σ_j β_j Ω_jA / ξ_j².
    pub lambda: DVector<f64>,
    /// Θ = Σ_j β_j² / ξ_j².
    pub theta: f64,
    /// Υ_i = Σ_AB Ω_iA (Q⁻¹)_AB Λ_B.
    pub upsilon: DVector<f64>,
    /// Υ̃_i built from the β-projected loadings; Σ_i β_i Υ̃_i = 0.
    pub upsilon_tilde: DVector<f64>,
}

pub fn general_factor_weights(
    xi2: &[f64],
    omega: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    beta: &BetaVector,
) -> Result<GeneralFactorWeights> {
    let n = xi2.len();
    let k = omega.ncols();
    if beta.len() != n || omega.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "factor loadings",
            expected: n,
            found: omega.nrows().min(beta.len()),
        });
    }
    if phi.nrows() != k || phi.ncols() != k {
        return Err(Error::DimensionMismatch {
            what: "factor covariance",
            expected: k,
            found: phi.nrows(),
        });
    }
    if let Some(v) = xi2.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "specific variance {v} is not positive"
        )));
    }
    let b = beta.to_dvector();
    let inv_xi2 = DVector::from_fn(n, |i, _| 1.0 / xi2[i]);
    let b_over = b.component_mul(&inv_xi2);
    let theta = b.dot(&b_over);
    let lambda = omega.tr_mul(&b_over);

    let (upsilon, upsilon_tilde, quad) = if k == 0 {
        (DVector::zeros(n), DVector::zeros(n), 0.0)
    } else {
        let phi_inv = Cholesky::new(phi.clone())
            .ok_or(Error::SingularFactorSystem)?
            .inverse();
        let scaled = DMatrix::from_fn(n, k, |i, a| omega[(i, a)] * inv_xi2[i]);
        let q = phi_inv + omega.tr_mul(&scaled);
        let q_inv_lambda = Cholesky::new(q)
            .ok_or(Error::SingularFactorSystem)?
            .solve(&lambda);
        let upsilon = omega * &q_inv_lambda;
        let omega_tilde = DMatrix::from_fn(n, k, |i, a| {
            (omega[(i, a)] - b[i] * lambda[a] / theta) * inv_xi2[i]
        });
        let upsilon_tilde = omega_tilde * &q_inv_lambda;
        let quad = lambda.dot(&q_inv_lambda);
        (upsilon, upsilon_tilde, quad)
    };
    let inv_sigma2 = theta - quad;
    if !(inv_sigma2 > 0.0) {
        return Err(Error::SingularFactorSystem);
    }
    let sigma_f2 = 1.0 / inv_sigma2;
    let weights = (&b - &upsilon).component_mul(&inv_xi2) * sigma_f2;
    Ok(GeneralFactorWeights {
        weights,
        sigma_f2,
        lambda,
        theta,
        upsilon,
        upsilon_tilde,
    })
}

/// How stock betas are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BetaSpec {
    /// β_i = σ_i, i.e. β/σ ≡ 1.
    ProportionalToSigma,
    /// Observed β/σ against an index, capped and floored at
    /// median ± κ·MAD around the median.
    ObservedCapped { kappa_max: f64, kappa_min: f64 },
    /// Betas supplied directly, aligned with the panel's tickers.
    Explicit { values: Vec<f64> },
}

impl BetaSpec {
    pub fn observed_capped() -> Self {
        BetaSpec::ObservedCapped {
            kappa_max: 1.0,
            kappa_min: 1.0,
        }
    }
}

/// Lower cap floor, as a fraction of the median β/σ.
pub const BETA_HAT_FLOOR_FRACTION: f64 = 0.05;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean absolute deviation about `center`.
pub fn mean_abs_deviation(values: &[f64], center: f64) -> f64 {
    values.iter().map(|v| (v - center).abs()).sum::<f64>() / values.len() as f64
}

/// Clamps observed β/σ values to `[m - κ_min·d, m + κ_max·d]` where `m` is
/// the median and `d` the mean absolute deviation about it. The lower cap is
/// floored at 5% of the median.
pub fn cap_beta_hats(observed: &[f64], kappa_max: f64, kappa_min: f64) -> Result<Vec<f64>> {
    if !(kappa_max > 0.0 && kappa_min > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cap multipliers must be positive, got {kappa_max} and {kappa_min}"
        )));
    }
    if observed.is_empty() {
        return Err(Error::InvalidConfig("no observed betas".into()));
    }
    let m = median(observed);
    if !(m > 0.0) {
        return Err(Error::InvalidBeta {
            ticker: "median".into(),
            value: m,
        });
    }
    let d = mean_abs_deviation(observed, m);
    let hi = m + kappa_max * d;
    let lo = (m - kappa_min * d).max(BETA_HAT_FLOOR_FRACTION * m);
    Ok(observed.iter().map(|v| v.clamp(lo, hi)).collect())
}

/// Builds positive betas for the panel according to `spec`.
pub fn make_betas(
    panel: &ReturnsPanel,
    spec: &BetaSpec,
    index_returns: Option<&DVector<f64>>,
) -> Result<BetaVector> {
    let sigma = sample_covariance(panel)?.sigmas();
    let tickers = panel.tickers();
    let values = match spec {
        BetaSpec::ProportionalToSigma => sigma.iter().copied().collect(),
        BetaSpec::ObservedCapped {
            kappa_max,
            kappa_min,
        } => {
            let index = index_returns.ok_or_else(|| {
                Error::InvalidConfig("observed-capped betas need index returns".into())
            })?;
            let obs = serial_betas(panel, index)?.beta;
            let mut hats = Vec::with_capacity(panel.n());
            for (i, s) in sigma.iter().enumerate() {
                if !(*s > 0.0) {
                    return Err(Error::InvalidBeta {
                        ticker: tickers[i].clone(),
                        value: 0.0,
                    });
                }
                hats.push(obs[i] / s);
            }
            cap_beta_hats(&hats, *kappa_max, *kappa_min)?
                .iter()
                .zip(sigma.iter())
                .map(|(h, s)| h * s)
                .collect()
        }
        BetaSpec::Explicit { values } => values.clone(),
    };
    BetaVector::new(values, tickers)
}

/// Writes `ticker,weight,beta,xi2,gamma_cluster`.
pub fn write_weights_csv(
    model: &RussianDollModel,
    result: &BenchmarkResult,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let g0 = model.tree().level(1).parent();
    let beta = model.beta().as_slice();
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "ticker,weight,beta,xi2,gamma_cluster")?;
        for (i, t) in model.tickers().iter().enumerate() {
            writeln!(
                out,
                "{t},{},{},{},{}",
                result.weights[i],
                beta[i],
                model.xi2()[i],
                result.gamma[g0[i]]
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads the `weight` column of a weights CSV, aligned to `tickers`.
pub fn load_weights_csv(path: impl AsRef<Path>, tickers: &[String]) -> Result<DVector<f64>> {
    let mut cols = crate::data_model::load_keyed_columns(path, tickers, &["weight"])?;
    Ok(cols.remove(0))
}
