use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UnmixError>;

#[derive(Debug, Error)]
pub enum UnmixError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// A computed quantity left its mathematically guaranteed range by more
    /// than round-off can explain.
    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl UnmixError {
    pub(crate) fn dims(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        UnmixError::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UnmixError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI. Each failure class gets its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            UnmixError::Config(_) => 2,
            UnmixError::Io { .. } | UnmixError::Parse { .. } => 3,
            UnmixError::Dimension { .. } => 4,
            UnmixError::Numerical { .. } | UnmixError::Consistency(_) => 5,
            UnmixError::Parameter(_) | UnmixError::DegenerateInput(_) => 6,
        }
    }
}
