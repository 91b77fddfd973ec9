use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{what} out of range: {value} (valid: {range})")]
    OutOfRange {
        what: &'static str,
        value: String,
        range: String,
    },

    #[error("backward called before forward")]
    NoForward,

    #[error("non-differentiable point: tie margin {margin:e} does not exceed {required:e}")]
    NonDifferentiable { margin: f64, required: f64 },

    #[error("degenerate degrees of freedom: dimension {dim} with {total} total samples")]
    DegenerateDof { dim: usize, total: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("idx format: {0}")]
    Idx(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::OutOfRange { .. } | Error::Json(_)
        )
    }
}
