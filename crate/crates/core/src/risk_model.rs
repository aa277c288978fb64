//! Nested ("Russian-doll") factor risk model built on a classification tree.
//!
//! Stocks load on their level-1 cluster with loading β_i; every level-ℓ
//! cluster loads on its level-(ℓ+1) parent with loading χ^(ℓ); the top level
//! either loads on a single market factor or stops there. Each cluster's
//! factor variance is fitted from the off-diagonal correlations inside its
//! block, clamped so that the specific share of every member's volatility
//! stays within `[z_min, z_max]`. The covariance of the next level is the
//! block-summed covariance of the current one with its diagonal rescaled to
//! the fitted variances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data_model::{BetaVector, ClassificationTree};
use crate::error::{Error, Result};
use crate::stats::CovarianceMatrix;

/// Bounds on the specific share of a unit's volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaFitConfig {
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for ThetaFitConfig {
    fn default() -> Self {
        Self {
            z_min: 0.1,
            z_max: 0.9,
        }
    }
}

impl ThetaFitConfig {
    pub fn new(z_min: f64, z_max: f64) -> Result<Self> {
        let cfg = Self { z_min, z_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.z_min && self.z_min < self.z_max && self.z_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= z_min < z_max <= 1, got z_min={} z_max={}",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }

    /// Largest max/min ratio of beta/sigma inside a block for which the
    /// lower variance bound does not exceed the upper one.
    pub fn admissible_beta_ratio(&self) -> f64 {
        ((1.0 - self.z_min * self.z_min) / (1.0 - self.z_max * self.z_max)).sqrt()
    }
}

/// Outcome of a single-block variance fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaFit {
    /// Unconstrained least-squares value; `None` for one-member blocks.
    pub unconstrained: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    /// `min(max(unconstrained, lower), upper)`.
    pub value: f64,
}

/// Fits the factor variance ϑ of the one-factor model
/// `Y = diag(a²) + ϑ b bᵀ` to the block `x`, keeping `diag(Y) = diag(x)`.
pub fn fit_theta(x: &DMatrix<f64>, b: &[f64], cfg: &ThetaFitConfig) -> Result<f64> {
    theta_fit_details(x, b, cfg).map(|f| f.value)
}

/// Same as [`fit_theta`] but also reports the bounds and the raw fit.
pub fn theta_fit_details(x: &DMatrix<f64>, b: &[f64], cfg: &ThetaFitConfig) -> Result<ThetaFit> {
    let m = b.len();
    if m == 0 {
        return Err(Error::EmptyBlock);
    }
    if x.nrows() != m || x.ncols() != m {
        return Err(Error::DimensionMismatch {
            what: "theta block",
            expected: m,
            found: x.nrows(),
        });
    }
    for a in 0..m {
        let v = x[(a, a)];
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidVariance { index: a, value: v });
        }
        if !(b[a].is_finite() && b[a] != 0.0) {
            return Err(Error::InvalidBeta {
                ticker: format!("block member {a}"),
                value: b[a],
            });
        }
    }
    let (one_minus_zmax2, one_minus_zmin2) =
        (1.0 - cfg.z_max * cfg.z_max, 1.0 - cfg.z_min * cfg.z_min);
    if m == 1 {
        let v = one_minus_zmax2 * x[(0, 0)] / (b[0] * b[0]);
        return Ok(ThetaFit {
            unconstrained: None,
            lower: v,
            upper: one_minus_zmin2 * x[(0, 0)] / (b[0] * b[0]),
            value: v,
        });
    }
    let sd: Vec<f64> = (0..m).map(|a| x[(a, a)].sqrt()).collect();
    let bh: Vec<f64> = b.iter().zip(&sd).map(|(b, s)| b / s).collect();
    let bh2_min = bh.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    let bh2_max = bh.iter().map(|v| v * v).fold(0.0, f64::max);
    let lower = one_minus_zmax2 / bh2_min;
    let upper = one_minus_zmin2 / bh2_max;

    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..m {
        for c in 0..m {
            if a != c {
                let corr = x[(a, c)] / (sd[a] * sd[c]);
                num += bh[a] * corr * bh[c];
                den += bh[a] * bh[a] * bh[c] * bh[c];
            }
        }
    }
    let star = num / den;
    // The order matters when lower > upper: the upper bound wins.
    let value = star.max(lower).min(upper);
    Ok(ThetaFit {
        unconstrained: Some(star),
        lower,
        upper,
        value,
    })
}

/// How unit covariances are summed into cluster covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Plain membership sums, as in the reference implementation.
    #[default]
    Membership,
    /// Sums weighted by the units' loadings (β at the stock level).
    Loadings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModelConfig {
    /// Bounds used at every level without an override.
    pub theta: ThetaFitConfig,
    /// Optional overrides indexed by the level of the fitted block's units
    /// (0 = stocks, P = top clusters).
    #[serde(default)]
    pub level_theta: Vec<Option<ThetaFitConfig>>,
    /// Fit a single market factor above the top level.
    pub mkt_fac: bool,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for RiskModelConfig {
    fn default() -> Self {
        Self {
            theta: ThetaFitConfig::default(),
            level_theta: Vec::new(),
            mkt_fac: true,
            aggregation: Aggregation::Membership,
        }
    }
}

impl RiskModelConfig {
    pub fn theta_for(&self, level: usize) -> ThetaFitConfig {
        self.level_theta
            .get(level)
            .copied()
            .flatten()
            .unwrap_or(self.theta)
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        for cfg in self.level_theta.iter().flatten() {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// Fitted nested risk model. Fully determines the stock covariance Γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr")]
pub struct RussianDollModel {
    tickers: Vec<String>,
    tree: ClassificationTree,
    beta: BetaVector,
    xi2: Vec<f64>,
    zeta2: Vec<Vec<f64>>,
    top_var: f64,
    chi: Vec<f64>,
    fitted_cluster_var: Vec<Vec<f64>>,
    config: RiskModelConfig,
}

#[derive(Deserialize)]
struct ModelRepr {
    tickers: Vec<String>,
    tree: ClassificationTree,
    beta: Vec<f64>,
    xi2: Vec<f64>,
    zeta2: Vec<Vec<f64>>,
    top_var: f64,
    chi: Vec<f64>,
    fitted_cluster_var: Vec<Vec<f64>>,
    config: RiskModelConfig,
}

impl TryFrom<ModelRepr> for RussianDollModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let beta = BetaVector::new(r.beta, &r.tickers)?;
        let mut model =
            Self::from_parts(r.tickers, r.tree, beta, r.xi2, r.zeta2, r.top_var, r.chi)?;
        let shapes_match = r.fitted_cluster_var.len() == model.fitted_cluster_var.len()
            && r.fitted_cluster_var
                .iter()
                .zip(&model.fitted_cluster_var)
                .all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(Error::InvalidConfig(
                "fitted cluster variances do not match the tree".into(),
            ));
        }
        model.fitted_cluster_var = r.fitted_cluster_var;
        model.config = r.config;
        Ok(model)
    }
}

impl RussianDollModel {
    /// Assembles a model from explicit variances. `zeta2[l - 1]` holds the
    /// level-l specific variances and `chi[l - 1]` the level-l loading.
    pub fn from_parts(
        tickers: Vec<String>,
        tree: ClassificationTree,
        beta: BetaVector,
        xi2: Vec<f64>,
        zeta2: Vec<Vec<f64>>,
        top_var: f64,
        chi: Vec<f64>,
    ) -> Result<Self> {
        let n = tree.n_stocks();
        let p = tree.depth();
        let check_len = |what, expected, found| {
            if expected != found {
                Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                })
            } else {
                Ok(())
            }
        };
        check_len("tickers", n, tickers.len())?;
        check_len("betas", n, beta.len())?;
        check_len("stock specific variances", n, xi2.len())?;
        check_len("levels of specific variances", p, zeta2.len())?;
        check_len("levels of loadings", p, chi.len())?;
        for (l, z) in zeta2.iter().enumerate() {
            check_len(
                "cluster specific variances",
                tree.n_clusters(l + 1),
                z.len(),
            )?;
            if let Some(v) = z.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "level-{} specific variance {v} is not a nonnegative number",
                    l + 1
                )));
            }
        }
        if let Some(v) = xi2.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "stock specific variance {v} is not positive"
            )));
        }
        if !(top_var.is_finite() && top_var >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "top variance {top_var} is negative"
            )));
        }
        if let Some(c) = chi.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::InvalidConfig(format!("loading {c} is not positive")));
        }
        let mut model = Self {
            tickers,
            tree,
            beta,
            xi2,
            zeta2,
            top_var,
            chi,
            fitted_cluster_var: Vec::new(),
            config: RiskModelConfig::default(),
        };
        model.fitted_cluster_var = model.implied_cluster_variances();
        Ok(model)
    }

    // diag Γ^(l) for l = 1..=P+1, from the top down
    fn implied_cluster_variances(&self) -> Vec<Vec<f64>> {
        let p = self.depth();
        let mut out = vec![Vec::new(); p + 1];
        out[p] = vec![self.top_var];
        for l in (1..=p).rev() {
            let parent: Vec<usize> = if l == p {
                vec![0; self.tree.n_clusters(p)]
            } else {
                self.tree.level(l + 1).parent().to_vec()
            };
            let chi2 = self.chi[l - 1] * self.chi[l - 1];
            out[l - 1] = self.zeta2[l - 1]
                .iter()
                .zip(&parent)
                .map(|(z, &a)| z + chi2 * out[l][a])
                .collect();
        }
        out
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn tree(&self) -> &ClassificationTree {
        &self.tree
    }

    pub fn beta(&self) -> &BetaVector {
        &self.beta
    }

    /// Stock specific variances ξ_i².
    pub fn xi2(&self) -> &[f64] {
        &self.xi2
    }

    /// Level-`level` cluster specific variances, level in 1..=P.
    pub fn zeta2(&self, level: usize) -> &[f64] {
        &self.zeta2[level - 1]
    }

    /// Variance of the market factor above level P (zero without one).
    pub fn top_var(&self) -> f64 {
        self.top_var
    }

    /// Loading χ^(level) of level-`level` clusters on their parents.
    pub fn chi(&self, level: usize) -> f64 {
        self.chi[level - 1]
    }

    /// Fitted factor variances: element `l` holds diag Γ^(l+1), l = 0..=P.
    pub fn fitted_cluster_var(&self) -> &[Vec<f64>] {
        &self.fitted_cluster_var
    }

    pub fn config(&self) -> &RiskModelConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    /// Rescales χ^(level) by `c` and every variance above that level by
    /// 1/c², which leaves the stock covariance unchanged.
    pub fn with_chi_rescaled(&self, level: usize, c: f64) -> Self {
        let mut m = self.clone();
        let inv = 1.0 / (c * c);
        m.chi[level - 1] *= c;
        for z in &mut m.zeta2[level..] {
            z.iter_mut().for_each(|v| *v *= inv);
        }
        m.top_var *= inv;
        for f in &mut m.fitted_cluster_var[level..] {
            f.iter_mut().for_each(|v| *v *= inv);
        }
        m
    }

    /// Dense factor covariance Γ^(level) of the level-`level` clusters for
    /// level in 1..=P+1 (level P+1 is the 1×1 market block).
    pub fn level_covariance(&self, level: usize) -> DMatrix<f64> {
        let p = self.depth();
        let mut g = DMatrix::from_element(1, 1, self.top_var);
        for l in (level.max(1)..=p).rev() {
            let k = self.tree.n_clusters(l);
            let parent: Vec<usize> = if l == p {
                vec![0; k]
            } else {
                self.tree.level(l + 1).parent().to_vec()
            };
            let chi2 = self.chi[l - 1] * self.chi[l - 1];
            let z = &self.zeta2[l - 1];
            g = DMatrix::from_fn(k, k, |a, b| {
                let v = chi2 * g[(parent[a], parent[b])];
                if a == b {
                    v + z[a]
                } else {
                    v
                }
            });
        }
        g
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidConfig(format!("model JSON: {e}")))
    }
}

fn beta_hats(
    x: &DMatrix<f64>,
    b: &[f64],
    units: &[usize],
    labels: &[String],
) -> Vec<(String, f64)> {
    units
        .iter()
        .map(|&k| (labels[k].clone(), b[k] / x[(k, k)].sqrt()))
        .collect()
}

/// Fits the nested model level by level, from stocks up to the market.
pub fn build_russian_doll(
    c: &CovarianceMatrix,
    tree: &ClassificationTree,
    beta: &BetaVector,
    config: &RiskModelConfig,
) -> Result<RussianDollModel> {
    config.validate()?;
    let n = c.n();
    if tree.n_stocks() != n {
        return Err(Error::DimensionMismatch {
            what: "classified stocks",
            expected: n,
            found: tree.n_stocks(),
        });
    }
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            what: "betas",
            expected: n,
            found: beta.len(),
        });
    }
    let p = tree.depth();
    let mut x = c.values().clone();
    let mut b: Vec<f64> = beta.as_slice().to_vec();
    let mut labels: Vec<String> = c.tickers().to_vec();

    let mut xi2 = Vec::new();
    let mut zeta2 = Vec::with_capacity(p);
    let mut fitted_all = Vec::with_capacity(p + 1);

    for l in 0..=p {
        let groups: Vec<Vec<usize>> = if l < p {
            tree.members(l + 1)
        } else {
            vec![(0..x.nrows()).collect()]
        };
        let cfg = config.theta_for(l);
        let mut fitted = vec![0.0; groups.len()];
        let mut spec = vec![0.0; x.nrows()];
        for (a, members) in groups.iter().enumerate() {
            let g = if l == p && !config.mkt_fac {
                0.0
            } else {
                let block = x.select_rows(members).select_columns(members);
                let bb: Vec<f64> = members.iter().map(|&k| b[k]).collect();
                let fit = theta_fit_details(&block, &bb, &cfg)?;
                if l == 0 && members.len() > 1 && fit.lower > fit.upper {
                    let hats = beta_hats(&x, &b, members, &labels);
                    let lo = hats.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
                    let hi = hats.iter().map(|h| h.1).fold(0.0, f64::max);
                    let r = cfg.admissible_beta_ratio();
                    let offenders = hats
                        .into_iter()
                        .filter(|(_, h)| *h < hi / r || *h > lo * r)
                        .collect();
                    return Err(Error::InadmissibleBetaRange {
                        cluster: tree.level(1).names()[a].clone(),
                        ratio: hi / lo,
                        max_ratio: r,
                        offenders,
                    });
                }
                fit.value
            };
            fitted[a] = g;
            for &k in members {
                spec[k] = x[(k, k)] - b[k] * b[k] * g;
            }
        }
        if let Some(k) = spec.iter().position(|v| !(*v > 0.0)) {
            let group = groups
                .iter()
                .find(|m| m.contains(&k))
                .expect("unit in a group");
            return Err(Error::NegativeSpecificVariance {
                level: l,
                unit: labels[k].clone(),
                value: spec[k],
                offenders: beta_hats(&x, &b, group, &labels),
            });
        }
        if l == 0 {
            xi2 = spec;
        } else {
            zeta2.push(spec);
        }

        if l < p {
            let parent = tree.level(l + 1).parent();
            let k_next = groups.len();
            let weights: Vec<f64> = match config.aggregation {
                Aggregation::Membership => vec![1.0; b.len()],
                Aggregation::Loadings => b.clone(),
            };
            let mut agg = DMatrix::<f64>::zeros(k_next, k_next);
            for i in 0..x.nrows() {
                for j in 0..x.ncols() {
                    agg[(parent[i], parent[j])] += x[(i, j)] * weights[i] * weights[j];
                }
            }
            let mut u = vec![0.0; k_next];
            for a in 0..k_next {
                let d = agg[(a, a)];
                if !(d > 0.0) {
                    return Err(Error::DegenerateModel(format!(
                        "aggregated variance of level-{} cluster {:?} is {d}",
                        l + 1,
                        tree.level(l + 1).names()[a]
                    )));
                }
                u[a] = (fitted[a] / d).sqrt();
            }
            for a in 0..k_next {
                for c in 0..k_next {
                    agg[(a, c)] *= u[a] * u[c];
                }
                // pin the diagonal to the fitted variance exactly
                agg[(a, a)] = fitted[a];
            }
            x = agg;
            b = vec![1.0; k_next];
            labels = tree.level(l + 1).names().to_vec();
        }
        fitted_all.push(fitted);
    }

    let top_var = fitted_all[p][0];
    Ok(RussianDollModel {
        tickers: c.tickers().to_vec(),
        tree: tree.clone(),
        beta: beta.clone(),
        xi2,
        zeta2,
        top_var,
        chi: vec![1.0; p],
        fitted_cluster_var: fitted_all,
        config: config.clone(),
    })
}

/// Expands the nested model into the dense stock covariance Γ.
pub fn assemble_dense(model: &RussianDollModel) -> CovarianceMatrix {
    let g1 = model.level_covariance(1);
    let g = model.tree.stock_cluster(1);
    let beta = model.beta.as_slice();
    let n = model.n();
    let values = DMatrix::from_fn(n, n, |i, j| {
        let v = beta[i] * beta[j] * g1[(g[i], g[j])];
        if i == j {
            v + model.xi2[i]
        } else {
            v
        }
    });
    CovarianceMatrix::from_parts(model.tickers.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn corr_block(off: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, off, off, 1.0])
    }

    #[test]
    fn single_member_block_closed_form() {
        let cfg = ThetaFitConfig::default();
        let x = DMatrix::from_element(1, 1, 0.04);
        let t = fit_theta(&x, &[0.5], &cfg).unwrap();
        assert_eq!(t, (1.0 - 0.81) * 0.04 / 0.25);
    }

    #[test]
    fn two_member_block_hand_values() {
        let cfg = ThetaFitConfig::default();
        let t = fit_theta(&corr_block(0.5), &[1.0, 1.0], &cfg).unwrap();
        assert_relative_eq!(t, 0.5, max_relative = 1e-15);
        // below the lower bound 1 - 0.81 = 0.19
        let t = fit_theta(&corr_block(0.05), &[1.0, 1.0], &cfg).unwrap();
        assert_relative_eq!(t, 0.19, max_relative = 1e-15);
        // above the upper bound 1 - 0.01 = 0.99
        let t = fit_theta(&corr_block(0.995), &[1.0, 1.0], &cfg).unwrap();
        assert_relative_eq!(t, 0.99, max_relative = 1e-15);
    }

    #[test]
    fn clamp_order_when_bounds_cross() {
        // b-hat = (1, 3): lower = 0.19, upper = 0.99/9 = 0.11
        let cfg = ThetaFitConfig::default();
        let f = theta_fit_details(&corr_block(0.6), &[1.0, 3.0], &cfg).unwrap();
        assert!(f.lower > f.upper);
        assert_eq!(f.value, f.upper);
    }

    #[test]
    fn theta_errors() {
        let cfg = ThetaFitConfig::default();
        assert!(matches!(
            fit_theta(&DMatrix::zeros(0, 0), &[], &cfg),
            Err(Error::EmptyBlock)
        ));
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.0]);
        assert!(matches!(
            fit_theta(&x, &[1.0, 1.0], &cfg),
            Err(Error::InvalidVariance { index: 1, .. })
        ));
        assert!(ThetaFitConfig::new(0.9, 0.1).is_err());
        assert!(ThetaFitConfig::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn admissible_ratio_at_defaults() {
        let r = ThetaFitConfig::default().admissible_beta_ratio();
        assert_relative_eq!(r, (0.99f64 / 0.19).sqrt());
        assert!((r - 2.28).abs() < 0.005);
    }

    fn toy_model() -> RussianDollModel {
        let tickers: Vec<String> = (0..4).map(|i| format!("S{i}")).collect();
        let tree = ClassificationTree::from_maps(vec![vec![0, 0, 1, 1]]).unwrap();
        let beta = BetaVector::new(vec![1.0, 2.0, 0.5, 1.5], &tickers).unwrap();
        RussianDollModel::from_parts(
            tickers,
            tree,
            beta,
            vec![0.1, 0.2, 0.3, 0.4],
            vec![vec![0.0, 0.0]],
            0.0,
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_factor_risk_is_diagonal() {
        let g = assemble_dense(&toy_model());
        assert_eq!(
            g.values(),
            &DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.1, 0.2, 0.3, 0.4]))
        );
    }

    #[test]
    fn single_cluster_is_rank_one_update() {
        let tickers: Vec<String> = (0..3).map(|i| format!("S{i}")).collect();
        let tree = ClassificationTree::from_maps(vec![vec![0, 0, 0]]).unwrap();
        let b = [1.0, 2.0, 0.5];
        let beta = BetaVector::new(b.to_vec(), &tickers).unwrap();
        let xi2 = vec![0.1, 0.2, 0.3];
        let v = 0.7;
        // one cluster, all of its variance in the market factor
        let m = RussianDollModel::from_parts(
            tickers,
            tree,
            beta,
            xi2.clone(),
            vec![vec![0.0]],
            v,
            vec![1.0],
        )
        .unwrap();
        let g = assemble_dense(&m);
        for i in 0..3 {
            for j in 0..3 {
                let expect = v * b[i] * b[j] + if i == j { xi2[i] } else { 0.0 };
                assert_relative_eq!(g.values()[(i, j)], expect, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let m = toy_model();
        let back = RussianDollModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(RussianDollModel::from_json("{\"tickers\": []}").is_err());
    }
}
