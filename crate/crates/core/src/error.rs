use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TecError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TecError {
    #[error("[{module}] shape mismatch: {detail}")]
    Shape { module: &'static str, detail: String },

    #[error("[{module}] invalid argument: {detail}")]
    InvalidArgument { module: &'static str, detail: String },

    #[error("[tensor] dense buffer of {dims:?} overflows addressable capacity")]
    Capacity { dims: Vec<usize> },

    #[error("[stm] singular linear system at iteration {iteration}")]
    Singular { iteration: usize },

    #[error("[datagen] covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("[ensemble] training labels contain a single class")]
    SingleClass,

    #[error("[ensemble] member {index} failed: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<TecError>,
    },

    #[error("[harness] {0}")]
    Data(String),

    #[error("[io] {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("[io] {path}: malformed archive: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl TecError {
    pub(crate) fn shape(module: &'static str, detail: impl Into<String>) -> Self {
        TecError::Shape {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(module: &'static str, detail: impl Into<String>) -> Self {
        TecError::InvalidArgument {
            module,
            detail: detail.into(),
        }
    }

    /// True for failures of the numerical routines, as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        match self {
            TecError::Singular { .. } | TecError::NotPositiveDefinite => true,
            TecError::Member { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
