use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time must not run backward: state is at {last} s, requested {requested} s")]
    TimeReversal { last: f64, requested: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("pattern source exhausted after {0} items")]
    SourceExhausted(usize),

    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX file ({actual} bytes, header needs {expected})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("image file has {images} items but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("dataset not found: {0}")]
    DatasetMissing(PathBuf),

    #[error("class {0} has no training examples in the register")]
    UntrainedClass(usize),

    #[error("normal equations are singular at pivot {pivot}; use a ridge regularizer lambda > 0")]
    RankDeficient { pivot: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error categories; the CLI maps each to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Dataset,
    Numerical,
    Io,
    Simulation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::BadMagic { .. } | Error::Truncated { .. } | Error::CountMismatch { .. } | Error::DatasetMissing(_) => {
                ErrorClass::Dataset
            }
            Error::RankDeficient { .. } => ErrorClass::Numerical,
            Error::Io { .. } => ErrorClass::Io,
            Error::TimeReversal { .. }
            | Error::InvalidParameter(_)
            | Error::ShapeMismatch { .. }
            | Error::OutOfRange { .. }
            | Error::SourceExhausted(_)
            | Error::UntrainedClass(_) => ErrorClass::Simulation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, actual })
    }
}
