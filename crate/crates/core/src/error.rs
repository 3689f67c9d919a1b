use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data for class `{class}`: need at least {needed} samples, got {got}")]
    InsufficientData {
        class: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),

    #[error("all ensemble weights are zero")]
    ZeroWeights,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("spatial underflow: kernel {kernel} larger than input {input}")]
    SpatialUnderflow { kernel: usize, input: usize },

    #[error("network shape error: {0}")]
    Shape(String),

    #[error("timestamps out of order in session `{session}` at record {index}")]
    UnsortedTimestamps { session: String, index: usize },

    #[error("accuracy curve is flat; no peak to fit")]
    FlatCurve,

    #[error("unknown session id `{0}`")]
    UnknownSession(String),

    #[error("unknown fusion strategy `{0}`")]
    UnknownStrategy(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
