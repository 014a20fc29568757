use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("unsupported format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("b-value {requested} not found; available b-values: {available:?}")]
    BValueNotFound { requested: f64, available: Vec<f64> },

    #[error("volume has {available} slices, {requested} requested")]
    InsufficientSlices { available: usize, requested: usize },

    #[error("mask is empty after thresholding")]
    EmptyMask,

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("objective returned non-finite value {value} at point {point:?}")]
    ObjectiveFault { point: Vec<f64>, value: f64 },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
