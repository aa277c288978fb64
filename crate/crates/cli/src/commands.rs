//! Subcommand implementations. Each writes its outputs under the configured
//! directory and returns a one-paragraph summary for stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use nestbench::benchmark::{load_weights_csv, write_weights_csv};
use nestbench::data_model::load_keyed_columns;
use nestbench::overlay::band_bounds;
use nestbench::{
    assemble_dense, benchmark_weights, build_constraints, build_russian_doll, combine,
    load_classification_csv, load_returns_csv, make_betas, residualize, sample_covariance,
    tune_gamma, validate_tree, BenchmarkResult, BetaSpec, BetaVector, ClassificationTree, Error,
    OverlayProblem, OverlayResult, Result, ReturnsPanel, RussianDollModel, TreeWarning, TuneStatus,
};
use serde::Serialize;

use crate::config::{BetaMode, RunConfig};
use crate::synth;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = RunConfig::require(&cfg.out, "out")?.to_path_buf();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidConfig(format!("cannot serialize sidecar: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Betas for the panel per the configured mode.
pub fn load_betas(cfg: &RunConfig, panel: &ReturnsPanel) -> Result<BetaVector> {
    match cfg.beta.mode {
        BetaMode::Explicit => {
            let path = RunConfig::require(&cfg.beta.betas, "betas")?;
            let values = load_keyed_columns(path, panel.tickers(), &["beta"])?.remove(0);
            make_betas(
                panel,
                &BetaSpec::Explicit {
                    values: values.iter().copied().collect(),
                },
                None,
            )
        }
        BetaMode::ObservedCapped => {
            let path = RunConfig::require(&cfg.beta.index_returns, "index-returns")?;
            let index = load_keyed_columns(path, panel.dates(), &["return"])?.remove(0);
            make_betas(panel, &cfg.beta_spec()?, Some(&index))
        }
        BetaMode::ProportionalToSigma => make_betas(panel, &cfg.beta_spec()?, None),
    }
}

pub struct BenchmarkRun {
    pub panel: ReturnsPanel,
    pub tree: ClassificationTree,
    pub warnings: Vec<TreeWarning>,
    pub model: RussianDollModel,
    pub result: BenchmarkResult,
}

/// Loads inputs, fits the nested model and computes benchmark weights.
pub fn fit_benchmark(cfg: &RunConfig) -> Result<BenchmarkRun> {
    let risk = cfg.risk_model()?;
    let panel = load_returns_csv(RunConfig::require(&cfg.returns, "returns")?)?;
    let tree = load_classification_csv(
        RunConfig::require(&cfg.classification, "classification")?,
        &panel,
    )?;
    let warnings = validate_tree(&tree, &panel)?;
    let beta = load_betas(cfg, &panel)?;
    let cov = sample_covariance(&panel)?;
    let model = build_russian_doll(&cov, &tree, &beta, &risk)?;
    let result = benchmark_weights(&model)?;
    Ok(BenchmarkRun {
        panel,
        tree,
        warnings,
        model,
        result,
    })
}

fn warning_text(w: &TreeWarning) -> String {
    match w {
        TreeWarning::SingletonCluster { level, cluster } => {
            format!("level-{level} cluster {cluster:?} has a single member")
        }
    }
}

#[derive(Serialize)]
struct BenchmarkSidecar<'a> {
    n: usize,
    depth: usize,
    clusters_per_level: Vec<usize>,
    sigma_f2: f64,
    normalization: &'static str,
    min_weight: f64,
    max_weight: f64,
    sum_weight: f64,
    warnings: Vec<String>,
    config: &'a RunConfig,
}

pub fn cmd_benchmark(cfg: &RunConfig) -> Result<String> {
    let dir = out_dir(cfg)?;
    let mut run = fit_benchmark(cfg)?;
    let normalization = if cfg.unit_sum {
        run.result.weights = run.result.unit_sum_weights();
        "unit-sum"
    } else {
        "unit-beta"
    };
    let w = &run.result.weights;
    write_weights_csv(&run.model, &run.result, dir.join("weights.csv"))?;
    let model_path = dir.join("risk_model.json");
    std::fs::write(&model_path, run.model.to_json() + "\n").map_err(io_err(&model_path))?;
    let clusters: Vec<usize> = (1..=run.tree.depth())
        .map(|l| run.tree.n_clusters(l))
        .collect();
    let sidecar = BenchmarkSidecar {
        n: run.panel.n(),
        depth: run.tree.depth(),
        clusters_per_level: clusters.clone(),
        sigma_f2: run.result.sigma_f2,
        normalization,
        min_weight: w.min(),
        max_weight: w.max(),
        sum_weight: w.sum(),
        warnings: run.warnings.iter().map(warning_text).collect(),
        config: cfg,
    };
    write_json(&dir.join("benchmark.json"), &sidecar)?;
    let mut summary = format!(
        "N={} P={} K={:?} sigma_F^2={:e} weight range [{:e}, {:e}]",
        sidecar.n,
        sidecar.depth,
        clusters,
        sidecar.sigma_f2,
        sidecar.min_weight,
        sidecar.max_weight
    );
    for w in &sidecar.warnings {
        summary.push_str("\nwarning: ");
        summary.push_str(w);
    }
    Ok(summary)
}

pub fn cmd_betas(cfg: &RunConfig) -> Result<String> {
    let dir = out_dir(cfg)?;
    let panel = load_returns_csv(RunConfig::require(&cfg.returns, "returns")?)?;
    let beta = load_betas(cfg, &panel)?;
    let path = dir.join("betas.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut out = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(out, "ticker,beta")?;
        for (t, b) in panel.tickers().iter().zip(beta.as_slice()) {
            writeln!(out, "{t},{b}")?;
        }
        out.flush()
    };
    body().map_err(io_err(&path))?;
    let b = beta.as_slice();
    let (lo, hi) = b
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    Ok(format!("N={} beta range [{lo:e}, {hi:e}]", b.len()))
}

pub struct OverlayOutcome {
    pub tickers: Vec<String>,
    pub w_star: DVector<f64>,
    pub result: OverlayResult,
}

/// Tunes the overlay on top of `w_star`, rescaled to sum to one.
pub fn run_overlay(
    cfg: &RunConfig,
    run: &BenchmarkRun,
    w_star: &DVector<f64>,
) -> Result<OverlayOutcome> {
    let oc = &cfg.overlay;
    let tickers = run.panel.tickers();
    let total = w_star.sum();
    if !(total > 0.0) || w_star.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidConfig(
            "benchmark weights must be positive".into(),
        ));
    }
    let w_star = w_star / total;
    let gp = assemble_dense(&run.model).values().clone();
    let signal = RunConfig::require(&oc.signal, "signal")?;
    let mut e = load_keyed_columns(signal, tickers, &["signal"])?.remove(0);
    if oc.residualize {
        e = residualize(&e, &w_star, None)?;
    }
    let (lower, upper) = match &oc.bounds {
        Some(path) => {
            let mut cols = load_keyed_columns(path, tickers, &["lower", "upper"])?;
            let upper = cols.pop().expect("two columns");
            (cols.pop().expect("two columns"), upper)
        }
        None => band_bounds(&w_star, oc.band_z)?,
    };
    let q = build_constraints(&oc.constraints, &gp, &w_star)?;
    let problem = OverlayProblem::new(e, gp, w_star.clone(), lower, upper, q)?;
    let result = tune_gamma(&problem, oc.gamma_max, oc.tol)?;
    combine(&w_star, &result.w_prime, problem.gp())?;
    Ok(OverlayOutcome {
        tickers: tickers.to_vec(),
        w_star,
        result,
    })
}

#[derive(Serialize)]
struct OverlaySidecar<'a> {
    gamma_opt: f64,
    gamma_max: f64,
    status: TuneStatus,
    sharpe_zero: f64,
    sharpe_opt: f64,
    rho: Option<f64>,
    active_set_size: usize,
    active_lower: Vec<&'a str>,
    active_upper: Vec<&'a str>,
    max_constraint_residual: f64,
    constraint_modes: Vec<&'static str>,
    sharpe_curve: &'a [(f64, f64)],
    config: &'a RunConfig,
}

pub fn cmd_overlay(cfg: &RunConfig) -> Result<String> {
    let dir = out_dir(cfg)?;
    let run = fit_benchmark(cfg)?;
    let w_star = match &cfg.overlay.benchmark {
        Some(path) => load_weights_csv(path, run.panel.tickers())?,
        None => run.result.weights.clone(),
    };
    let out = run_overlay(cfg, &run, &w_star)?;
    let r = &out.result;

    let path = dir.join("overlay.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut f = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(f, "ticker,w_star,w_prime,w_combined")?;
        for (i, t) in out.tickers.iter().enumerate() {
            writeln!(
                f,
                "{t},{},{},{}",
                out.w_star[i], r.w_prime[i], r.combined[i]
            )?;
        }
        f.flush()
    };
    body().map_err(io_err(&path))?;

    let names = |idx: &[usize]| {
        idx.iter()
            .map(|&i| out.tickers[i].as_str())
            .collect::<Vec<_>>()
    };
    let sidecar = OverlaySidecar {
        gamma_opt: r.gamma_prime,
        gamma_max: r.gamma_max,
        status: r.status,
        sharpe_zero: r.sharpe_zero,
        sharpe_opt: r.sharpe_opt,
        rho: r.rho,
        active_set_size: r.at_lower.len() + r.at_upper.len(),
        active_lower: names(&r.at_lower),
        active_upper: names(&r.at_upper),
        max_constraint_residual: r.constraint_residuals.amax(),
        constraint_modes: cfg.overlay.constraints.iter().map(|m| m.as_str()).collect(),
        sharpe_curve: &r.sharpe_curve,
        config: cfg,
    };
    write_json(&dir.join("overlay.json"), &sidecar)?;
    Ok(format!(
        "gamma'={:e} ({:?}) S(0)={:.6} S(gamma')={:.6} active bounds {}",
        r.gamma_prime, r.status, r.sharpe_zero, r.sharpe_opt, sidecar.active_set_size
    ))
}

#[derive(Serialize)]
struct SynthSidecar<'a> {
    mean_within_cluster_correlation: f64,
    config: &'a RunConfig,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<String> {
    cfg.synth.validate()?;
    let dir = out_dir(cfg)?;
    let data = synth::generate(&cfg.synth)?;
    synth::write(&data, &dir)?;
    let corr = synth::mean_within_cluster_correlation(&data.panel, &data.tree);
    write_json(
        &dir.join("synth.json"),
        &SynthSidecar {
            mean_within_cluster_correlation: corr,
            config: cfg,
        },
    )?;
    Ok(format!(
        "N={} T={} K={:?} mean within-cluster correlation {corr:.4}",
        cfg.synth.n, cfg.synth.t, cfg.synth.clusters
    ))
}
