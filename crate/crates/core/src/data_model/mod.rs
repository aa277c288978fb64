//! Return panels, classification trees, betas and their CSV formats.

mod panel;
mod tree;

pub use panel::{
    load_keyed_columns, load_returns_csv, write_returns_csv, BetaVector, ReturnsPanel,
};
pub use tree::{
    load_classification_csv, validate_tree, write_classification_csv, ClassificationTree, Level,
    TreeWarning,
};
