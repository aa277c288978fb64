use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nestbench::{Aggregation, ConstraintMode, Error, Result};
use nestbench_cli::commands::{cmd_benchmark, cmd_betas, cmd_overlay, cmd_synth};
use nestbench_cli::config::RunConfig;
use nestbench_cli::exit_code;

/// Long-only benchmarks from nested industry risk models, and dollar-neutral
/// overlays on top of them.
#[derive(Parser)]
#[command(name = "nestbench", version)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the nested risk model and write benchmark weights.
    Benchmark {
        #[command(flatten)]
        model: ModelArgs,
        /// Rescale weights to sum to one instead of Σwβ = 1.
        #[arg(long)]
        unit_sum: bool,
    },
    /// Tune a dollar-neutral overlay on the benchmark.
    Overlay {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        overlay: OverlayArgs,
    },
    /// Generate a synthetic returns panel, classification and signal.
    Synth(SynthArgs),
    /// Compute betas only.
    Betas {
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Returns CSV: header `ticker,<date>...`, one row per ticker.
    #[arg(long)]
    returns: Option<PathBuf>,
    /// Classification CSV: header `ticker,level1,...,levelP`.
    #[arg(long)]
    classification: Option<PathBuf>,
    /// proportional-to-sigma | observed-capped | explicit
    #[arg(long)]
    beta_mode: Option<String>,
    /// `ticker,beta` file for explicit betas.
    #[arg(long)]
    betas: Option<PathBuf>,
    /// `date,return` index series for observed-capped betas.
    #[arg(long)]
    index_returns: Option<PathBuf>,
    /// Cap on β̂ above the median, in mean absolute deviations.
    #[arg(long)]
    kappa_max: Option<f64>,
    /// Cap on β̂ below the median, in mean absolute deviations.
    #[arg(long)]
    kappa_min: Option<f64>,
    /// Lower bound on each unit's specific-risk fraction.
    #[arg(long)]
    z_min: Option<f64>,
    /// Upper bound on each unit's specific-risk fraction.
    #[arg(long)]
    z_max: Option<f64>,
    /// Fit a market factor above the top classification level.
    #[arg(long)]
    mkt_fac: Option<bool>,
    /// membership | loadings
    #[arg(long)]
    aggregation: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlayArgs {
    /// `ticker,signal` expected returns.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Weights CSV from a previous benchmark run.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// `ticker,lower,upper` bounds on the overlay.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Comma-separated: dollar-neutral, zero-expected-correlation,
    /// orthogonal-to-benchmark.
    #[arg(long, value_delimiter = ',')]
    constraints: Option<Vec<String>>,
    /// Half-width of the default band as a fraction of w*.
    #[arg(long)]
    band_z: Option<f64>,
    /// Upper end of the risk-aversion search bracket.
    #[arg(long)]
    gamma_max: Option<f64>,
    /// Relative tolerance of the golden-section search.
    #[arg(long)]
    tol: Option<f64>,
    /// Regress the signal on w* and use the residual.
    #[arg(long)]
    residualize: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// Cluster counts per level, finest first.
    #[arg(long, value_delimiter = ',')]
    clusters: Option<Vec<usize>>,
    /// Planted correlation per level, finest first.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    market_rho: Option<f64>,
    #[arg(long)]
    vol_mu: Option<f64>,
    #[arg(long)]
    vol_sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

impl ModelArgs {
    fn apply(self, cfg: &mut RunConfig) -> Result<()> {
        set(&mut cfg.returns, self.returns.map(Some));
        set(&mut cfg.classification, self.classification.map(Some));
        set(&mut cfg.out, self.out.map(Some));
        if let Some(m) = self.beta_mode {
            cfg.beta.mode = m.parse()?;
        }
        set(&mut cfg.beta.betas, self.betas.map(Some));
        set(&mut cfg.beta.index_returns, self.index_returns.map(Some));
        set(&mut cfg.beta.kappa_max, self.kappa_max);
        set(&mut cfg.beta.kappa_min, self.kappa_min);
        set(&mut cfg.z_min, self.z_min);
        set(&mut cfg.z_max, self.z_max);
        set(&mut cfg.mkt_fac, self.mkt_fac);
        if let Some(a) = self.aggregation {
            cfg.aggregation = match a.as_str() {
                "membership" => Aggregation::Membership,
                "loadings" => Aggregation::Loadings,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown aggregation {other:?}"
                    )))
                }
            };
        }
        Ok(())
    }
}

impl OverlayArgs {
    fn apply(self, cfg: &mut RunConfig) -> Result<()> {
        let o = &mut cfg.overlay;
        set(&mut o.signal, self.signal.map(Some));
        set(&mut o.benchmark, self.benchmark.map(Some));
        set(&mut o.bounds, self.bounds.map(Some));
        if let Some(list) = self.constraints {
            let mut modes = vec![ConstraintMode::DollarNeutral];
            for s in list {
                let m: ConstraintMode = s.parse()?;
                if !modes.contains(&m) {
                    modes.push(m);
                }
            }
            o.constraints = modes;
        }
        set(&mut o.band_z, self.band_z);
        set(&mut o.gamma_max, self.gamma_max.map(Some));
        set(&mut o.tol, self.tol);
        o.residualize |= self.residualize;
        Ok(())
    }
}

impl SynthArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let s = &mut cfg.synth;
        set(&mut s.n, self.n);
        set(&mut s.t, self.t);
        set(&mut s.clusters, self.clusters);
        set(&mut s.rho, self.rho);
        set(&mut s.market_rho, self.market_rho);
        set(&mut s.vol_mu, self.vol_mu);
        set(&mut s.vol_sigma, self.vol_sigma);
        set(&mut s.alpha, self.alpha);
        set(&mut s.seed, self.seed);
        set(&mut cfg.out, self.out.map(Some));
    }
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Benchmark { model, unit_sum } => {
            model.apply(&mut cfg)?;
            cfg.unit_sum |= unit_sum;
            cmd_benchmark(&cfg)
        }
        Command::Overlay { model, overlay } => {
            model.apply(&mut cfg)?;
            overlay.apply(&mut cfg)?;
            cmd_overlay(&cfg)
        }
        Command::Synth(args) => {
            args.apply(&mut cfg);
            cmd_synth(&cfg)
        }
        Command::Betas { model } => {
            model.apply(&mut cfg)?;
            cmd_betas(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
