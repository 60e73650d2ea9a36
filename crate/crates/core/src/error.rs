use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    /// Degenerate input such as a zero-variance coordinate.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Caller violated an operation's precondition (shape, length, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Internal inconsistency between a graph and the data it was built from.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("horizon mismatch: expected {}+{} steps, got {}+{}", expected.0, expected.1, actual.0, actual.1)]
    HorizonMismatch {
        /// `(t_obs, t_pred)` the model was built for.
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("training diverged at epoch {epoch} (window {window}): {message}")]
    Divergence {
        epoch: usize,
        window: String,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
