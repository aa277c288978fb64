//! Run configuration: a JSON file whose fields can each be overridden on the
//! command line. The effective configuration is echoed into every sidecar.

use std::path::{Path, PathBuf};

use nestbench::{
    Aggregation, BetaSpec, ConstraintMode, Error, Result, RiskModelConfig, ThetaFitConfig,
};
use serde::{Deserialize, Serialize};

use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    ProportionalToSigma,
    ObservedCapped,
    Explicit,
}

impl std::str::FromStr for BetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proportional-to-sigma" => Ok(BetaMode::ProportionalToSigma),
            "observed-capped" => Ok(BetaMode::ObservedCapped),
            "explicit" => Ok(BetaMode::Explicit),
            other => Err(Error::InvalidConfig(format!("unknown beta mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaConfig {
    pub mode: BetaMode,
    pub kappa_max: f64,
    pub kappa_min: f64,
    /// `ticker,beta` file for explicit mode.
    pub betas: Option<PathBuf>,
    /// `date,return` file for observed-capped mode.
    pub index_returns: Option<PathBuf>,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            mode: BetaMode::ProportionalToSigma,
            kappa_max: 1.0,
            kappa_min: 1.0,
            betas: None,
            index_returns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayConfig {
    /// `ticker,signal` file of expected returns.
    pub signal: Option<PathBuf>,
    /// Benchmark weights CSV from a previous run; recomputed when absent.
    pub benchmark: Option<PathBuf>,
    /// `ticker,lower,upper` file; the ±band_z·w* band when absent.
    pub bounds: Option<PathBuf>,
    pub constraints: Vec<ConstraintMode>,
    pub band_z: f64,
    pub gamma_max: Option<f64>,
    pub tol: f64,
    /// Regress the signal on w* and keep the residual.
    pub residualize: bool,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            signal: None,
            benchmark: None,
            bounds: None,
            constraints: vec![ConstraintMode::DollarNeutral],
            band_z: 0.5,
            gamma_max: None,
            tol: 1e-6,
            residualize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub returns: Option<PathBuf>,
    pub classification: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub beta: BetaConfig,
    pub z_min: f64,
    pub z_max: f64,
    pub mkt_fac: bool,
    pub aggregation: Aggregation,
    /// Also report weights rescaled to sum to one.
    pub unit_sum: bool,
    pub overlay: OverlayConfig,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let theta = ThetaFitConfig::default();
        Self {
            returns: None,
            classification: None,
            out: None,
            beta: BetaConfig::default(),
            z_min: theta.z_min,
            z_max: theta.z_max,
            mkt_fac: true,
            aggregation: Aggregation::Membership,
            unit_sum: false,
            overlay: OverlayConfig::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn risk_model(&self) -> Result<RiskModelConfig> {
        let cfg = RiskModelConfig {
            theta: ThetaFitConfig::new(self.z_min, self.z_max)?,
            level_theta: Vec::new(),
            mkt_fac: self.mkt_fac,
            aggregation: self.aggregation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Beta spec without the explicit values, which are read from file.
    pub fn beta_spec(&self) -> Result<BetaSpec> {
        let b = &self.beta;
        Ok(match b.mode {
            BetaMode::ProportionalToSigma => BetaSpec::ProportionalToSigma,
            BetaMode::ObservedCapped => {
                if !(b.kappa_max > 0.0 && b.kappa_min > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "cap multipliers must be positive, got {} and {}",
                        b.kappa_max, b.kappa_min
                    )));
                }
                BetaSpec::ObservedCapped {
                    kappa_max: b.kappa_max,
                    kappa_min: b.kappa_min,
                }
            }
            BetaMode::Explicit => BetaSpec::Explicit { values: Vec::new() },
        })
    }

    pub fn require<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(format!("missing required --{name}")))
    }
}
