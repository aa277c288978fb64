mod common;

use common::rng;
use nalgebra::{DMatrix, DVector};
use nestbench::overlay::{band_bounds, default_gamma_max, kkt_certificate, objective, tune_gamma};
use nestbench::{
    assemble_dense, benchmark_weights, build_constraints, build_russian_doll, combine,
    optimize_mvo, residualize, sample_covariance, ConstraintMode, OverlayProblem, RiskModelConfig,
    TuneStatus,
};
use rand::Rng;

struct Setup {
    gp: DMatrix<f64>,
    w_star: DVector<f64>,
    e: DVector<f64>,
}

/// Γ′ and w* from a fitted nested model; E a random signal.
fn setup(seed: u64, n_range: std::ops::RangeInclusive<usize>) -> Setup {
    let mut r = rng(seed);
    let n = r.random_range(n_range);
    let p = r.random_range(1..=2);
    let tree = common::random_tree(&mut r, n, p);
    let panel = common::simulate_panel(&mut r, &tree, 120);
    let cov = sample_covariance(&panel).unwrap();
    let beta = common::dispersed_betas(&mut r, &cov, 2.0);
    let model = build_russian_doll(&cov, &tree, &beta, &RiskModelConfig::default()).unwrap();
    let res = benchmark_weights(&model).unwrap();
    let gp = assemble_dense(&model).values().clone();
    let e = DVector::from_fn(n, |_, _| r.random_range(-1e-3..1e-3));
    Setup {
        gp,
        w_star: res.unit_sum_weights(),
        e,
    }
}

fn mode_set(k: u64) -> Vec<ConstraintMode> {
    match k % 4 {
        0 => vec![ConstraintMode::DollarNeutral],
        1 => vec![ConstraintMode::ZeroExpectedCorrelation],
        2 => vec![ConstraintMode::OrthogonalToBenchmark],
        _ => vec![
            ConstraintMode::ZeroExpectedCorrelation,
            ConstraintMode::OrthogonalToBenchmark,
        ],
    }
}

fn problem(s: &Setup, z: f64, modes: &[ConstraintMode], e: DVector<f64>) -> OverlayProblem {
    let (lo, hi) = band_bounds(&s.w_star, z).unwrap();
    let q = build_constraints(modes, &s.gp, &s.w_star).unwrap();
    OverlayProblem::new(e, s.gp.clone(), s.w_star.clone(), lo, hi, q).unwrap()
}

#[test]
fn solutions_are_feasible_and_certified() {
    for seed in 0..100u64 {
        let s = setup(seed, 4..=30);
        let mut r = rng(seed + 1000);
        let pr = problem(&s, r.random_range(0.1..1.0), &mode_set(seed), s.e.clone());
        let g0 = default_gamma_max(&pr).unwrap() / 100.0;
        for mult in [0.1, 1.0, 10.0, 1000.0] {
            let g = g0 * mult;
            let sol = optimize_mvo(&pr, g).unwrap();
            let w = &sol.w_prime;
            assert!(w.sum().abs() <= 1e-10, "seed {seed}");
            assert!(pr.q().tr_mul(w).amax() <= 1e-10, "seed {seed}");
            for i in 0..w.len() {
                assert!(w[i] >= pr.lower()[i] - 1e-15 && w[i] <= pr.upper()[i] + 1e-15);
            }
            let cert = kkt_certificate(&pr, g, w, Some(&sol.multipliers), 1e-8);
            assert!(cert.passed, "seed {seed} γ′ {g}: {cert:?}");
        }
    }
}

/// Exact optimum by enumerating every lower/upper/free assignment.
fn enumerate_optimum(pr: &OverlayProblem, gamma: f64) -> f64 {
    let n = pr.n();
    let q = pr.q();
    let p = q.ncols();
    let mut best = f64::NEG_INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut w = DVector::zeros(n);
        let mut free = Vec::new();
        for i in 0..n {
            match c % 3 {
                0 => w[i] = pr.lower()[i],
                1 => w[i] = pr.upper()[i],
                _ => free.push(i),
            }
            c /= 3;
        }
        let fixed: Vec<usize> = (0..n).filter(|i| !free.contains(i)).collect();
        let m = free.len();
        // maximize over free coords: stationarity (γ/2)E − Γw = Qν, Qᵀw = 0
        let mut a = DMatrix::zeros(m + p, m + p);
        let mut rhs = DVector::zeros(m + p);
        for (x, &i) in free.iter().enumerate() {
            for (y, &j) in free.iter().enumerate() {
                a[(x, y)] = pr.gp()[(i, j)];
            }
            for k in 0..p {
                a[(x, m + k)] = q[(i, k)];
                a[(m + k, x)] = q[(i, k)];
            }
            rhs[x] = 0.5 * gamma * pr.e()[i]
                - fixed.iter().map(|&j| pr.gp()[(i, j)] * w[j]).sum::<f64>();
        }
        for k in 0..p {
            rhs[m + k] = -fixed.iter().map(|&j| q[(j, k)] * w[j]).sum::<f64>();
        }
        let sol = match a.clone().full_piv_lu().solve(&rhs) {
            Some(s) => s,
            None => match a.clone().svd(true, true).solve(&rhs, 1e-13) {
                Ok(s) => s,
                Err(_) => continue,
            },
        };
        // reject rank-deficient systems that cannot meet the equalities
        if (&a * &sol - &rhs).amax() > 1e-9 * rhs.amax().max(1e-12) {
            continue;
        }
        for (x, &i) in free.iter().enumerate() {
            w[i] = sol[x];
        }
        let feasible = (0..n)
            .all(|i| w[i] >= pr.lower()[i] - 1e-12 && w[i] <= pr.upper()[i] + 1e-12)
            && pr.q().tr_mul(&w).amax() <= 1e-10;
        if feasible {
            best = best.max(objective(pr, gamma, &w));
        }
    }
    best
}

#[test]
fn small_problems_match_exhaustive_active_sets() {
    for seed in 0..60u64 {
        let s = setup(seed, 4..=6);
        let pr = problem(&s, 0.5, &mode_set(seed), s.e.clone());
        let g0 = default_gamma_max(&pr).unwrap() / 100.0;
        for mult in [0.5, 3.0, 50.0] {
            let g = g0 * mult;
            let sol = optimize_mvo(&pr, g).unwrap();
            let got = objective(&pr, g, &sol.w_prime);
            let best = enumerate_optimum(&pr, g);
            // the objective can cancel to far below its terms; measure
            // agreement against the size of the terms
            let w = &sol.w_prime;
            let terms = pr.e().component_mul(w).abs().sum() + w.dot(&(pr.gp() * w)) / g;
            assert!(
                (got - best).abs() <= 1e-10 * terms,
                "seed {seed}: {got} vs {best}"
            );
        }
    }
}

#[test]
fn small_problems_beat_grid_search() {
    // dollar neutrality only: grid over N−1 coordinates, the last one balances
    for seed in 0..20u64 {
        let s = setup(seed, 4..=5);
        let n = s.w_star.len();
        let pr = problem(&s, 0.5, &[ConstraintMode::DollarNeutral], s.e.clone());
        let g = default_gamma_max(&pr).unwrap() / 20.0;
        let got = objective(&pr, g, &optimize_mvo(&pr, g).unwrap().w_prime);
        let steps = if n == 4 { 40 } else { 16 };
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; n - 1];
        'grid: loop {
            let mut w = DVector::zeros(n);
            for i in 0..n - 1 {
                let t = idx[i] as f64 / steps as f64;
                w[i] = pr.lower()[i] + t * (pr.upper()[i] - pr.lower()[i]);
            }
            w[n - 1] = -w.rows(0, n - 1).sum();
            if w[n - 1] >= pr.lower()[n - 1] && w[n - 1] <= pr.upper()[n - 1] {
                best = best.max(objective(&pr, g, &w));
            }
            for i in 0..n - 1 {
                idx[i] += 1;
                if idx[i] <= steps {
                    continue 'grid;
                }
                idx[i] = 0;
            }
            break;
        }
        assert!(got >= best - 1e-6, "seed {seed}: {got} < grid {best}");
        assert!(
            got >= best,
            "seed {seed}: optimizer below a feasible grid point"
        );
    }
}

#[test]
fn tuning_never_loses_to_the_benchmark() {
    for seed in 0..60u64 {
        let s = setup(seed, 4..=30);
        let modes = mode_set(seed);
        let pr = problem(&s, 0.5, &modes, s.e.clone());
        let res = tune_gamma(&pr, None, 1e-6).unwrap();
        assert!(res.sharpe_opt >= res.sharpe_zero, "seed {seed}");
        assert!(res.w_prime.sum().abs() <= 1e-10);
        let c = combine(&s.w_star, &res.w_prime, &s.gp).unwrap();
        assert!(c.weights.iter().all(|w| *w >= 0.0));
        if modes.contains(&ConstraintMode::ZeroExpectedCorrelation) {
            if let Some(rho) = c.rho {
                assert!(rho.abs() <= 1e-8, "seed {seed}: rho {rho}");
            }
        }
    }
}

#[test]
fn zero_correlation_constraint_zeroes_rho_with_loose_bounds() {
    for seed in 0..30u64 {
        let s = setup(seed, 4..=30);
        let pr = problem(
            &s,
            1.0,
            &[ConstraintMode::ZeroExpectedCorrelation],
            s.e.clone(),
        );
        // well inside the first binding scale
        let g = default_gamma_max(&pr).unwrap() / 1000.0;
        let sol = optimize_mvo(&pr, g).unwrap();
        assert!(sol.at_lower.is_empty() && sol.at_upper.is_empty());
        let c = combine(&s.w_star, &sol.w_prime, &s.gp).unwrap();
        assert!(c.rho.unwrap().abs() <= 1e-8);
    }
}

#[test]
fn residualized_signal_is_uncorrelated_at_the_stationary_point() {
    for seed in 0..30u64 {
        let s = setup(seed, 4..=30);
        let eps = residualize(&s.e, &s.w_star, None).unwrap();
        // unconstrained maximizer of Eᵀw − (1/γ′)wᵀΓ′w is (γ′/2)Γ′⁻¹E
        let w = s.gp.clone().cholesky().unwrap().solve(&eps) * 0.5;
        let c = combine(&s.w_star, &DVector::zeros(w.len()), &s.gp).unwrap();
        assert!(c.rho.is_none());
        let cov = s.w_star.dot(&(&s.gp * &w));
        let rho = cov / (c.sigma_star * w.dot(&(&s.gp * &w)).sqrt());
        assert!(rho.abs() <= 1e-8, "seed {seed}: {rho}");
    }
}

/// Four stocks, a strong signal and a tight band: bounds bind early and the
/// Sharpe ratio peaks inside the bracket.
fn binding_fixture() -> OverlayProblem {
    let gp = DMatrix::from_row_slice(
        4,
        4,
        &[
            4.0e-4, 1.2e-4, 0.8e-4, 0.6e-4, //
            1.2e-4, 2.5e-4, 0.7e-4, 0.5e-4, //
            0.8e-4, 0.7e-4, 3.0e-4, 0.9e-4, //
            0.6e-4, 0.5e-4, 0.9e-4, 1.8e-4,
        ],
    );
    let w_star = DVector::from_column_slice(&[0.2, 0.3, 0.25, 0.25]);
    let e = DVector::from_column_slice(&[1.5e-3, -0.4e-3, 0.9e-3, -1.1e-3]);
    let (lo, hi) = band_bounds(&w_star, 0.3).unwrap();
    let q = build_constraints(&[ConstraintMode::DollarNeutral], &gp, &w_star).unwrap();
    OverlayProblem::new(e, gp, w_star, lo, hi, q).unwrap()
}

fn grid_argmax(pr: &OverlayProblem, a: f64, b: f64, points: usize) -> (f64, f64) {
    let mut best = (a, f64::NEG_INFINITY);
    for k in 0..points {
        let g = a + (b - a) * (k as f64 + 0.5) / points as f64;
        let s = pr.sharpe(&optimize_mvo(pr, g).unwrap().w_prime);
        if s > best.1 {
            best = (g, s);
        }
    }
    best
}

#[test]
fn golden_section_matches_grid_scan() {
    let pr = binding_fixture();
    let res = tune_gamma(&pr, None, 1e-8).unwrap();
    assert_eq!(res.status, TuneStatus::Interior);
    assert!(!res.at_lower.is_empty() || !res.at_upper.is_empty());
    // coarse scan of the bracket, then a fine scan of the winning cell
    let gmax = res.gamma_max;
    let cell = gmax / 10_000.0;
    let (g1, _) = grid_argmax(&pr, 0.0, gmax, 10_000);
    let (g2, s2) = grid_argmax(&pr, g1 - cell, g1 + cell, 10_000);
    assert!(
        ((res.gamma_prime - g2) / g2).abs() <= 1e-4,
        "golden {} vs grid {g2}",
        res.gamma_prime
    );
    assert!(res.sharpe_opt >= s2 - 1e-12 * s2.abs());
}

#[test]
fn loose_bounds_saturate_the_bracket() {
    let mut r = rng(5);
    let pr0 = binding_fixture();
    let w_star = pr0.w_star().clone();
    let gp = pr0.gp().clone();
    let e = DVector::from_fn(4, |_, _| r.random_range(-1e-3..1e-3));
    let eps = residualize(&e, &w_star, None).unwrap();
    let (lo, hi) = band_bounds(&w_star, 1.0).unwrap();
    let q = build_constraints(&[ConstraintMode::ZeroExpectedCorrelation], &gp, &w_star).unwrap();
    let pr = OverlayProblem::new(eps, gp, w_star, lo, hi, q).unwrap();
    // stop the bracket before the first bound can bind
    let gmax = default_gamma_max(&pr).unwrap() / 100.0 * 0.9;
    let res = tune_gamma(&pr, Some(gmax), 1e-6).unwrap();
    assert_eq!(res.status, TuneStatus::BracketSaturated);
    assert_eq!(res.gamma_prime, gmax);
    let curve = &res.sharpe_curve;
    assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12));
}
