use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: Vec<usize>,
    },

    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("langevin chain diverged: |{component}| reached {value:e}")]
    Divergence { component: String, value: f64 },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("frame directory {dir}: missing frame index {index}")]
    MissingFrame { dir: PathBuf, index: usize },

    #[error("{path}: {message}")]
    Media { path: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            message: message.into(),
        }
    }
}
