//! Seeded random instances shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nestbench::{
    build_russian_doll, sample_covariance, BetaVector, ClassificationTree, CovarianceMatrix,
    ReturnsPanel, RiskModelConfig, RussianDollModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tickers(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i:03}")).collect()
}

/// Surjective map of `n` units onto `k` clusters.
pub fn random_map(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut map: Vec<usize> = (0..n)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    // shuffle so the forced members are not always the first units
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        map.swap(i, j);
    }
    map
}

/// Random P-level tree with K^(1) ≤ N/2 and nonincreasing cluster counts.
pub fn random_tree(rng: &mut impl Rng, n: usize, p: usize) -> ClassificationTree {
    let mut maps = Vec::with_capacity(p);
    let mut units = n;
    for l in 0..p {
        let cap = if l == 0 { (n / 2).max(1) } else { units };
        let k = rng.random_range(1..=cap);
        maps.push(random_map(rng, units, k));
        units = k;
    }
    ClassificationTree::from_maps(maps).unwrap()
}

/// Returns simulated from a nested factor structure: market, one factor per
/// cluster at every level, and idiosyncratic noise, with log-normal vols.
pub fn simulate_panel(rng: &mut impl Rng, tree: &ClassificationTree, t: usize) -> ReturnsPanel {
    let n = tree.n_stocks();
    let p = tree.depth();
    let cluster: Vec<Vec<usize>> = (1..=p).map(|l| tree.stock_cluster(l)).collect();
    let loads: Vec<f64> = (0..=p).map(|_| rng.random_range(0.2..0.6)).collect();
    let vol: Vec<f64> = (0..n)
        .map(|_| 0.02 * (0.4 * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    let mut values = DMatrix::zeros(n, t);
    for s in 0..t {
        let market: f64 = rng.sample(StandardNormal);
        let factors: Vec<Vec<f64>> = (1..=p)
            .map(|l| {
                (0..tree.n_clusters(l))
                    .map(|_| StandardNormal.sample(rng))
                    .collect()
            })
            .collect();
        for i in 0..n {
            let mut r = loads[p] * market;
            for l in 0..p {
                r += loads[l] * factors[l][cluster[l][i]];
            }
            let eps: f64 = rng.sample(StandardNormal);
            values[(i, s)] = vol[i] * (r + eps);
        }
    }
    let dates = (0..t).map(|s| format!("d{s:04}")).collect();
    ReturnsPanel::new(tickers(n), dates, values).unwrap()
}

/// β = σ·β̂ with β̂ uniform in [1, ratio].
pub fn dispersed_betas(rng: &mut impl Rng, c: &CovarianceMatrix, ratio: f64) -> BetaVector {
    let s = c.sigmas();
    let v = s
        .iter()
        .map(|s| s * rng.random_range(1.0..=ratio))
        .collect();
    BetaVector::new(v, c.tickers()).unwrap()
}

pub struct Instance {
    pub panel: ReturnsPanel,
    pub tree: ClassificationTree,
    pub cov: CovarianceMatrix,
    pub beta: BetaVector,
    pub model: RussianDollModel,
}

/// N∈[4,50], T∈[60,260], P∈[1,3], β̂ dispersion below the admissible ratio.
pub fn random_instance(seed: u64, mkt_fac: bool) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(4..=50);
    let t = r.random_range(60..=260);
    let p = r.random_range(1..=3);
    let tree = random_tree(&mut r, n, p);
    let panel = simulate_panel(&mut r, &tree, t);
    let cov = sample_covariance(&panel).unwrap();
    let beta = dispersed_betas(&mut r, &cov, 2.2);
    let config = RiskModelConfig {
        mkt_fac,
        ..RiskModelConfig::default()
    };
    let model = build_russian_doll(&cov, &tree, &beta, &config).unwrap();
    Instance {
        panel,
        tree,
        cov,
        beta,
        model,
    }
}

pub fn max_rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| ((x - y) / y).abs())
        .fold(0.0, f64::max)
}
