mod common;

use common::{max_rel_err, random_instance, rng, tickers};
use nalgebra::{DMatrix, DVector};
use nestbench::{
    assemble_dense, benchmark_weights, benchmark_weights_oracle, betas_from_weights,
    build_russian_doll, general_factor_weights, BetaVector, ClassificationTree, CovarianceMatrix,
    RiskModelConfig, RussianDollModel,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn product_formula_matches_dense_inverse() {
    for seed in 0..120u64 {
        let inst = random_instance(seed, seed % 2 == 0);
        let res = benchmark_weights(&inst.model).unwrap();
        let dense = assemble_dense(&inst.model);
        let (w, s2) = benchmark_weights_oracle(&dense, &inst.beta).unwrap();
        let err = max_rel_err(&res.weights, &w);
        assert!(err <= 1e-8, "seed {seed}: weight error {err}");
        assert!(((res.sigma_f2 - s2) / s2).abs() <= 1e-8, "seed {seed}");
    }
}

#[test]
fn weights_reproduce_betas_and_diagonal() {
    for seed in 200..300u64 {
        let inst = random_instance(seed, seed % 3 != 0);
        let res = benchmark_weights(&inst.model).unwrap();
        let dense = assemble_dense(&inst.model);
        assert!(res.weights.iter().all(|w| *w > 0.0), "seed {seed}");
        let b = inst.beta.to_dvector();
        assert!((res.weights.dot(&b) - 1.0).abs() <= 1e-12, "seed {seed}");
        let (implied, var) = betas_from_weights(&dense, &res.weights).unwrap();
        assert!(max_rel_err(&implied, &b) <= 1e-10, "seed {seed}");
        assert!(
            ((var - res.sigma_f2) / res.sigma_f2).abs() <= 1e-10,
            "seed {seed}"
        );
        for i in 0..inst.cov.n() {
            let (g, c) = (dense.values()[(i, i)], inst.cov.values()[(i, i)]);
            assert!(
                ((g - c) / c).abs() <= 1e-10,
                "seed {seed} stock {i}: {g} vs {c}"
            );
        }
        let unit = res.unit_sum_weights();
        assert!((unit.sum() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn symmetric_instance_has_equal_weights() {
    let (sigma, rho) = (0.2_f64, 0.3);
    let c = DMatrix::from_fn(4, 4, |i, j| sigma * sigma * if i == j { 1.0 } else { rho });
    let cov = CovarianceMatrix::new(tickers(4), c).unwrap();
    let tree = ClassificationTree::from_maps(vec![vec![0, 0, 1, 1]]).unwrap();
    let beta = BetaVector::new(vec![sigma; 4], &tickers(4)).unwrap();
    for mkt_fac in [true, false] {
        let cfg = RiskModelConfig {
            mkt_fac,
            ..RiskModelConfig::default()
        };
        let model = build_russian_doll(&cov, &tree, &beta, &cfg).unwrap();
        let w = benchmark_weights(&model).unwrap().weights;
        for i in 0..4 {
            assert!((w[i] - 1.0 / (4.0 * sigma)).abs() < 1e-14);
        }
    }
}

#[test]
fn single_cluster_reduces_to_one_factor_form() {
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let n = r.random_range(3..15);
        let tree = ClassificationTree::from_maps(vec![vec![0; n]]).unwrap();
        let panel = common::simulate_panel(&mut r, &tree, 120);
        let cov = nestbench::sample_covariance(&panel).unwrap();
        let beta = common::dispersed_betas(&mut r, &cov, 2.0);
        let model = build_russian_doll(&cov, &tree, &beta, &RiskModelConfig::default()).unwrap();
        let w = benchmark_weights(&model).unwrap().weights;
        let b = beta.as_slice();
        let xi2 = model.xi2();
        let theta: f64 = (0..n).map(|i| b[i] * b[i] / xi2[i]).sum();
        for i in 0..n {
            let expected = b[i] / xi2[i] / theta;
            assert!(((w[i] - expected) / expected).abs() <= 1e-12, "seed {seed}");
        }
    }
}

// Hand-built P=2 model: 6 stocks, level-1 clusters {0,1},{2,3,4},{5},
// level-2 clusters {A0,A1},{A2}, uniform loading χ at both levels.
fn two_level_model(chi: f64, top: f64) -> RussianDollModel {
    let tree = ClassificationTree::from_maps(vec![vec![0, 0, 1, 1, 1, 2], vec![0, 0, 1]]).unwrap();
    let beta = BetaVector::new(vec![0.9, 1.1, 1.0, 0.7, 1.3, 1.2], &tickers(6)).unwrap();
    RussianDollModel::from_parts(
        tickers(6),
        tree,
        beta,
        vec![0.04, 0.05, 0.03, 0.06, 0.045, 0.02],
        vec![vec![0.01, 0.015, 0.02], vec![0.008, 0.012]],
        top,
        vec![chi, chi],
    )
    .unwrap()
}

#[test]
fn two_level_product_matches_explicit_form() {
    for (chi, top) in [(1.0, 0.005), (0.7, 0.005), (1.3, 0.0)] {
        let model = two_level_model(chi, top);
        let res = benchmark_weights(&model).unwrap();
        let beta = model.beta().as_slice();
        let xi2 = model.xi2();
        let (z1, z2) = (model.zeta2(1), model.zeta2(2));
        let g1 = [0usize, 0, 1, 1, 1, 2];
        let up = [0usize, 0, 1];
        let c2 = chi * chi;

        let mut l1 = [0.0; 3];
        for i in 0..6 {
            l1[g1[i]] += beta[i] * beta[i] / xi2[i];
        }
        let mut l2 = [0.0; 2];
        for a in 0..3 {
            l2[up[a]] += c2 * l1[a] / (1.0 + z1[a] * l1[a]);
        }
        let l3: f64 = (0..2).map(|b| c2 * l2[b] / (1.0 + z2[b] * l2[b])).sum();
        for a in 0..3 {
            let b = up[a];
            let gamma = 1.0 / ((1.0 + z1[a] * l1[a]) * (1.0 + z2[b] * l2[b]) * (1.0 + top * l3));
            assert!(((res.gamma[a] - gamma) / gamma).abs() <= 1e-10, "chi {chi}");
        }
        // and the dense route agrees on weights
        let (w, _) = benchmark_weights_oracle(&assemble_dense(&model), model.beta()).unwrap();
        assert!(max_rel_err(&res.weights, &w) <= 1e-10);
    }
}

#[test]
fn loading_scale_between_levels_is_immaterial() {
    for seed in 0..30u64 {
        let inst = random_instance(seed, true);
        let base = benchmark_weights(&inst.model).unwrap().weights;
        let dense = assemble_dense(&inst.model);
        for level in 1..=inst.model.depth() {
            let m = inst.model.with_chi_rescaled(level, 1.7);
            let w = benchmark_weights(&m).unwrap().weights;
            assert!(max_rel_err(&w, &base) <= 1e-12, "seed {seed} level {level}");
            let d = assemble_dense(&m);
            let diff = (d.values() - dense.values()).amax();
            assert!(diff <= 1e-14 * dense.values().amax(), "seed {seed}");
        }
    }
}

fn random_factor_instance(seed: u64) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>, BetaVector) {
    let mut r = rng(seed);
    let n = r.random_range(2..=20);
    let k = r.random_range(1..=5);
    let xi2: Vec<f64> = (0..n).map(|_| r.random_range(0.01..0.1)).collect();
    let omega = DMatrix::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
    let a = DMatrix::from_fn(k, k, |_, _| r.random_range(-0.3..0.3));
    let phi = &a * a.transpose() + DMatrix::identity(k, k) * 0.05;
    let beta = BetaVector::new(
        (0..n).map(|_| r.random_range(0.5..1.5)).collect(),
        &tickers(n),
    )
    .unwrap();
    (xi2, omega, phi, beta)
}

#[test]
fn general_factor_weights_match_dense_inverse() {
    for seed in 0..100u64 {
        let (xi2, omega, phi, beta) = random_factor_instance(seed);
        let n = xi2.len();
        let g = DMatrix::from_diagonal(&DVector::from_column_slice(&xi2))
            + &omega * &phi * omega.transpose();
        let g = (&g + g.transpose()) * 0.5;
        let cov = CovarianceMatrix::new(tickers(n), g).unwrap();
        let (w, s2) = benchmark_weights_oracle(&cov, &beta).unwrap();
        let gen = general_factor_weights(&xi2, &omega, &phi, &beta).unwrap();
        let scale = w.amax();
        let err = (&gen.weights - &w).amax() / scale;
        assert!(err <= 1e-9, "seed {seed}: {err}");
        assert!(((gen.sigma_f2 - s2) / s2).abs() <= 1e-9);

        // Σ β Υ̃ = 0
        let b = beta.to_dvector();
        let terms = b.component_mul(&gen.upsilon_tilde);
        assert!(
            terms.sum().abs() <= 1e-10 * terms.abs().sum().max(1e-300),
            "seed {seed}"
        );
        // w_i = β_i/(Θ ξ_i²) − σ_F² Υ̃_i
        for i in 0..n {
            let alt = b[i] / (gen.theta * xi2[i]) - gen.sigma_f2 * gen.upsilon_tilde[i];
            assert!((alt - gen.weights[i]).abs() <= 1e-10 * scale, "seed {seed}");
        }
    }
}

#[test]
fn cluster_factors_reduce_to_per_cluster_discount() {
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let n = r.random_range(2..=20);
        let k = r.random_range(1..=n.min(5));
        let g = common::random_map(&mut r, n, k);
        let xi2: Vec<f64> = (0..n).map(|_| r.random_range(0.01..0.1)).collect();
        let beta = BetaVector::new(
            (0..n).map(|_| r.random_range(0.5..1.5)).collect(),
            &tickers(n),
        )
        .unwrap();
        let b = beta.as_slice();
        let phi_diag: Vec<f64> = (0..k).map(|_| r.random_range(0.01..0.2)).collect();
        let omega = DMatrix::from_fn(n, k, |i, a| if g[i] == a { b[i] } else { 0.0 });
        let phi = DMatrix::from_diagonal(&DVector::from_column_slice(&phi_diag));
        let gen = general_factor_weights(&xi2, &omega, &phi, &beta).unwrap();

        let mut lam = vec![0.0; k];
        for i in 0..n {
            lam[g[i]] += b[i] * b[i] / xi2[i];
        }
        let gamma: Vec<f64> = (0..k).map(|a| 1.0 / (1.0 + phi_diag[a] * lam[a])).collect();
        let s2 = 1.0 / (0..k).map(|a| lam[a] * gamma[a]).sum::<f64>();
        for i in 0..n {
            let w = s2 * b[i] / xi2[i] * gamma[g[i]];
            assert!(((gen.weights[i] - w) / w).abs() <= 1e-10, "seed {seed}");
        }
        // one cluster spanning everything leaves Υ̃ at rounding noise, so
        // scale by the uncancelled terms β_iΥ_i/ξ_i²
        let residual: f64 = (0..n).map(|i| b[i] * gen.upsilon_tilde[i]).sum();
        let scale: f64 = (0..n).map(|i| (b[i] * gen.upsilon[i] / xi2[i]).abs()).sum();
        assert!(residual.abs() <= 1e-10 * scale.max(1e-300), "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn beta_scale_rescales_weights(seed in 0u64..10_000, c in 0.1f64..10.0) {
        let inst = random_instance(seed, seed % 2 == 0);
        let base = benchmark_weights(&inst.model).unwrap().weights;
        let scaled_beta = inst.beta.scaled(c);
        let cfg = inst.model.config().clone();
        let m = build_russian_doll(&inst.cov, &inst.tree, &scaled_beta, &cfg).unwrap();
        let w = benchmark_weights(&m).unwrap().weights;
        prop_assert!(max_rel_err(&(w * c), &base) <= 1e-10);
    }
}
