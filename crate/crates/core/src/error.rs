use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MossError>;

#[derive(Debug, Error)]
pub enum MossError {
    #[error("dimension mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Dimension {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}:{line}: field `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MossError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MossError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        MossError::Contract(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        MossError::Precondition(msg.into())
    }

    /// True for errors caused by malformed input data rather than a runtime fault.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            MossError::Parse { .. } | MossError::Io { .. } | MossError::Json(_)
        )
    }
}
