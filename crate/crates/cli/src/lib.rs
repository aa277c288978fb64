//! Library side of the `nestbench` binary: configuration, the synthetic
//! fixture generator and the subcommands, exposed for integration tests.

pub mod commands;
pub mod config;
pub mod synth;

use nestbench::{Error, ErrorCategory};

/// Process exit code for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        ErrorCategory::Input => 2,
        ErrorCategory::Model => 3,
        ErrorCategory::Convergence => 4,
    }
}
