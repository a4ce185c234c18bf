//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("{op} requires a non-empty input")]
    EmptyInput { op: &'static str },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },

    #[error("non-finite gradient for parameter `{param}`")]
    NanGradient { param: String },

    #[error("non-finite loss at example {example}")]
    NanLoss { example: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
