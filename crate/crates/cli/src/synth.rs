//! Seeded synthetic panels with a planted nested correlation structure.
//!
//! Stock i's return is
//! `μ_i + σ_i (√ρ_M m + Σ_ℓ √(ρ_ℓ − ρ_{ℓ+1}) f^ℓ_{c_ℓ(i)} + √(1 − ρ_1) ε_i)`
//! with ρ_{P+1} = ρ_M, so two stocks whose finest shared cluster is at level
//! ℓ have correlation ρ_ℓ, and stocks sharing no cluster have ρ_M.
//! Volatilities are log-normal; the drift μ_i = α σ_i z_i is also written out
//! as the signal file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nestbench::data_model::{write_classification_csv, write_returns_csv};
use nestbench::{ClassificationTree, Error, Result, ReturnsPanel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    /// Cluster counts per level, finest first.
    pub clusters: Vec<usize>,
    /// Planted correlation of stocks whose finest shared cluster is at each
    /// level, finest first.
    pub rho: Vec<f64>,
    /// Correlation of stocks sharing no cluster.
    pub market_rho: f64,
    /// Mean and standard deviation of log per-period volatility.
    pub vol_mu: f64,
    pub vol_sigma: f64,
    /// Drift per unit volatility.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 60,
            t: 250,
            clusters: vec![12, 4],
            rho: vec![0.4, 0.25],
            market_rho: 0.15,
            vol_mu: (0.02f64).ln(),
            vol_sigma: 0.4,
            alpha: 0.02,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let p = self.clusters.len();
        if p == 0 {
            return bad("need at least one classification level".into());
        }
        if self.rho.len() != p {
            return bad(format!("{} correlations for {p} levels", self.rho.len()));
        }
        let k1 = self.clusters[0];
        if self.n < 2 * k1 {
            return bad(format!("need N >= 2*K1, got N={} K1={k1}", self.n));
        }
        if self.t < 2 {
            return bad(format!("need T >= 2, got {}", self.t));
        }
        if self.clusters.contains(&0) || self.clusters.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!(
                "cluster counts {:?} must be positive and nonincreasing",
                self.clusters
            ));
        }
        // nonnegative, nonincreasing toward the market, below one
        let mut chain = self.rho.clone();
        chain.push(self.market_rho);
        let ok = chain
            .iter()
            .all(|r| r.is_finite() && (0.0..1.0).contains(r))
            && chain.windows(2).all(|w| w[0] >= w[1]);
        if !ok {
            return bad(format!(
                "correlations {:?} then market {} must lie in [0, 1) and not increase",
                self.rho, self.market_rho
            ));
        }
        if !(self.vol_mu.is_finite() && self.vol_sigma.is_finite() && self.vol_sigma >= 0.0) {
            return bad("volatility parameters must be finite, sigma nonnegative".into());
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite".into());
        }
        Ok(())
    }

    /// Contiguous assignment: stock i joins level-1 cluster ⌊i·K1/N⌋, and
    /// cluster a of level ℓ joins ⌊a·K_{ℓ+1}/K_ℓ⌋.
    pub fn tree(&self) -> Result<ClassificationTree> {
        let mut maps = Vec::with_capacity(self.clusters.len());
        let mut units = self.n;
        for &k in &self.clusters {
            maps.push((0..units).map(|a| a * k / units).collect());
            units = k;
        }
        let names = self
            .clusters
            .iter()
            .enumerate()
            .map(|(l, &k)| (0..k).map(|a| format!("C{}_{a:03}", l + 1)).collect())
            .collect();
        ClassificationTree::with_names(maps, names)
    }
}

pub struct SyntheticData {
    pub panel: ReturnsPanel,
    pub tree: ClassificationTree,
    pub signal: DVector<f64>,
    pub vols: DVector<f64>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let tree = spec.tree()?;
    let (n, t, p) = (spec.n, spec.t, spec.clusters.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let vols = DVector::from_fn(n, |_, _| {
        (spec.vol_mu + spec.vol_sigma * rng.sample::<f64, _>(StandardNormal)).exp()
    });
    let signal = DVector::from_fn(n, |i, _| {
        spec.alpha * vols[i] * rng.sample::<f64, _>(StandardNormal)
    });

    let mut chain = spec.rho.clone();
    chain.push(spec.market_rho);
    let load: Vec<f64> = (0..p).map(|l| (chain[l] - chain[l + 1]).sqrt()).collect();
    let market_load = spec.market_rho.sqrt();
    let idio_load = (1.0 - spec.rho[0]).sqrt();
    let cluster: Vec<Vec<usize>> = (1..=p).map(|l| tree.stock_cluster(l)).collect();

    let mut values = DMatrix::zeros(n, t);
    let mut factors: Vec<Vec<f64>> = spec.clusters.iter().map(|&k| vec![0.0; k]).collect();
    for s in 0..t {
        let market: f64 = rng.sample(StandardNormal);
        for f in factors.iter_mut() {
            for v in f.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        for i in 0..n {
            let mut z = market_load * market;
            for l in 0..p {
                z += load[l] * factors[l][cluster[l][i]];
            }
            let eps: f64 = rng.sample(StandardNormal);
            z += idio_load * eps;
            values[(i, s)] = signal[i] + vols[i] * z;
        }
    }
    let tickers = (0..n).map(|i| format!("S{i:04}")).collect();
    let dates = (0..t).map(|s| format!("d{s:05}")).collect();
    Ok(SyntheticData {
        panel: ReturnsPanel::new(tickers, dates, values)?,
        tree,
        signal,
        vols,
    })
}

/// Writes `returns.csv`, `classification.csv` and `signal.csv` into `dir`.
pub fn write(data: &SyntheticData, dir: &Path) -> Result<()> {
    write_returns_csv(&data.panel, dir.join("returns.csv"))?;
    write_classification_csv(
        &data.tree,
        data.panel.tickers(),
        dir.join("classification.csv"),
    )?;
    let path = dir.join("signal.csv");
    let file = File::create(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(out, "ticker,signal")?;
        for (i, t) in data.panel.tickers().iter().enumerate() {
            writeln!(out, "{t},{}", data.signal[i])?;
        }
        out.flush()
    };
    body().map_err(|e| Error::Io { path, source: e })
}

/// Mean sample correlation over pairs that share a level-1 cluster.
pub fn mean_within_cluster_correlation(panel: &ReturnsPanel, tree: &ClassificationTree) -> f64 {
    let c = nestbench::sample_covariance(panel).expect("panel has T >= 2");
    let s = c.sigmas();
    let g = tree.stock_cluster(1);
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..panel.n() {
        for j in 0..i {
            if g[i] == g[j] {
                sum += c.values()[(i, j)] / (s[i] * s[j]);
                count += 1;
            }
        }
    }
    sum / count as f64
}
