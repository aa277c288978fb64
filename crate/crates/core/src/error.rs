use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers that map failures to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad files, malformed values, inconsistent shapes or settings.
    Input,
    /// The data was well-formed but the model or optimizer cannot proceed.
    Model,
    /// An iterative routine hit its iteration cap.
    Convergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("non-numeric cell at row {row}, column {col}: {value:?}")]
    NonNumericCell {
        row: usize,
        col: usize,
        value: String,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("duplicate ticker {0:?}")]
    DuplicateTicker(String),

    #[error("duplicate date label {0:?}")]
    DuplicateDate(String),

    #[error("need at least {needed} observations, found {found}")]
    InsufficientObservations { needed: usize, found: usize },

    #[error("need at least 2 stocks, found {0}")]
    InsufficientStocks(usize),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("no entry for ticker {0:?}")]
    MissingTicker(String),

    #[error("level {level} has an empty label for ticker {ticker:?}")]
    EmptyLevelLabel { level: usize, ticker: String },

    #[error(
        "inconsistent nesting: level-{level} cluster {cluster:?} sits under both {first:?} and {second:?}"
    )]
    InconsistentNesting {
        level: usize,
        cluster: String,
        first: String,
        second: String,
    },

    #[error("stock {0:?} is not mapped to any level-1 cluster")]
    UnmappedStock(String),

    #[error("level-{level} cluster {cluster} has no members")]
    EmptyCluster { level: usize, cluster: usize },

    #[error("invalid classification tree: {0}")]
    InvalidTree(String),

    #[error("invalid beta for {ticker:?}: {value}")]
    InvalidBeta { ticker: String, value: f64 },

    #[error("benchmark return series has zero variance")]
    DegenerateBenchmark,

    #[error("portfolio variance {0} is not positive")]
    DegeneratePortfolioVariance(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("theta fit on an empty block")]
    EmptyBlock,

    #[error("block diagonal entry {index} is not a positive variance: {value}")]
    InvalidVariance { index: usize, value: f64 },

    #[error(
        "beta-hat dispersion {ratio:.4} in level-1 cluster {cluster:?} exceeds the admissible ratio {max_ratio:.4}; offending stocks (ticker, beta/sigma): {offenders:?}"
    )]
    InadmissibleBetaRange {
        cluster: String,
        ratio: f64,
        max_ratio: f64,
        offenders: Vec<(String, f64)>,
    },

    #[error(
        "non-positive specific variance {value} at level {level} for {unit:?}; offending units (label, beta/sigma): {offenders:?}"
    )]
    NegativeSpecificVariance {
        level: usize,
        unit: String,
        value: f64,
        offenders: Vec<(String, f64)>,
    },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("covariance matrix is not positive-definite")]
    SingularCovariance,

    #[error("factor system is singular")]
    SingularFactorSystem,

    #[error("regression denominator is zero")]
    DegenerateRegression,

    #[error("constraint matrix is rank-deficient")]
    DegenerateConstraints,

    #[error("invalid bounds at index {index}: lower {lower}, upper {upper}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("combined weight {value} at index {index} is negative")]
    LongOnlyViolation { index: usize, value: f64 },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize, last: Vec<f64> },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io { .. }
            | Csv { .. }
            | NonNumericCell { .. }
            | NonFiniteValue { .. }
            | DuplicateTicker(_)
            | DuplicateDate(_)
            | InsufficientObservations { .. }
            | InsufficientStocks(_)
            | DimensionMismatch { .. }
            | MissingTicker(_)
            | EmptyLevelLabel { .. }
            | InconsistentNesting { .. }
            | UnmappedStock(_)
            | EmptyCluster { .. }
            | InvalidTree(_)
            | InvalidBeta { .. }
            | InvalidConfig(_)
            | InvalidBounds { .. } => ErrorCategory::Input,
            NoConvergence { .. } => ErrorCategory::Convergence,
            _ => ErrorCategory::Model,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
