//! CLI-level error type and exit-code policy.

use ac_control::ModelError;
use thiserror::Error;

/// Anything a subcommand can fail with.
#[derive(Debug, Error)]
pub enum CliError {
    /// Config file problems: syntax, unknown keys, or a violated modelling
    /// assumption. `line` is 1-based when the failure points at a line.
    #[error("{}{message}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        message: String,
    },

    /// Propagated toolkit error.
    #[error(transparent)]
    Model(#[from] ModelError),

    /// Filesystem trouble while reading inputs or writing the bundle.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Shorthand for a semantic config error without a line anchor.
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config {
            line: None,
            message: message.into(),
        }
    }

    /// Process exit code: 1 for anything the user can fix in the inputs,
    /// 2 when a solver gave up on a well-posed problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(
                ModelError::NewtonDivergence { .. }
                | ModelError::SeparationViolation { .. }
                | ModelError::LinearSolveFailure(_)
                | ModelError::RootFindFailure(_)
                | ModelError::NonmonotoneDecrease { .. },
            ) => 2,
            _ => 1,
        }
    }
}
