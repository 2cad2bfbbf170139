use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint was trained for task {found}, expected {expected}")]
    KindMismatch { found: String, expected: String },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for bad or
    /// unreadable data, 4 for numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::KindMismatch { .. } => 2,
            Error::Divergence(_) => 4,
            _ => 3,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn shapes(op: &'static str, expected: Shape, got: Shape) -> Self {
        Self::shape(op, expected, got)
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
