//! Nested ("Russian-doll") risk models, the long-only benchmarks they imply,
//! and mean-variance overlays on top of those benchmarks.
//!
//! The pipeline is: load a [`ReturnsPanel`] and a [`ClassificationTree`],
//! estimate a sample covariance, fit a [`RussianDollModel`] with
//! [`build_russian_doll`], read off benchmark weights with
//! [`benchmark_weights`], then optionally tilt them with an overlay.

pub mod benchmark;
pub mod data_model;
mod error;
pub mod overlay;
pub mod risk_model;
pub mod stats;

pub use benchmark::{
    benchmark_weights, benchmark_weights_oracle, general_factor_weights, make_betas,
    BenchmarkResult, BetaSpec, GeneralFactorWeights,
};
pub use data_model::{
    load_classification_csv, load_returns_csv, validate_tree, BetaVector, ClassificationTree,
    ReturnsPanel, TreeWarning,
};
pub use error::{Error, ErrorCategory, Result};
pub use overlay::{
    build_constraints, combine, optimize_mvo, residualize, tune_gamma, ConstraintMode,
    OverlayProblem, OverlayResult, TuneStatus,
};
pub use risk_model::{
    assemble_dense, build_russian_doll, fit_theta, Aggregation, RiskModelConfig, RussianDollModel,
    ThetaFitConfig,
};
pub use stats::{betas_from_weights, sample_covariance, serial_betas, CovarianceMatrix};
