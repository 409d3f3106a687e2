use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {context} at flat index {index}")]
    NonFinite { context: String, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("unknown preset `{0}` (expected one of mnist, cifar10, cifar100, svhn, stl10)")]
    UnknownPreset(String),

    #[error("{path}: format error: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: consistency error: {reason}")]
    Consistency { path: PathBuf, reason: String },

    #[error("{path}: truncated at byte offset {offset}: {reason}")]
    Truncated {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("early stopping: {0}")]
    EarlyStop(String),

    #[error("missing forward cache for layer {0}; run a training-mode forward first")]
    MissingCache(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
