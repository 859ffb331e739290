use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NtkError {
    /// Malformed or inconsistent configuration (bad shapes, unknown keys, ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value or a solver failure.
    #[error("numerical error in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// Bad input data: invalid class index, truncated file, etc.
    #[error("data error: {0}")]
    Data(String),

    /// API misuse such as backpropagating through a stale tape.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),

    #[error("version mismatch: {0}")]
    Version(String),

    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NtkError {
    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        NtkError::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NtkError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            NtkError::Config(_) | NtkError::Usage(_) | NtkError::Version(_) => 2,
            NtkError::Diverged { .. } | NtkError::Numerical { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, NtkError>;
