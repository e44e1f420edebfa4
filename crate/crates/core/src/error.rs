use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operator received tensors whose shapes violate its contract.
    #[error("{op}: shape mismatch, expected {expected}, got {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input is well-formed but the quantity is undefined for it
    /// (every pixel ignored, zero sampled RoIs, empty category domain).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("backward called before a forward pass recorded the requested output")]
    BackwardBeforeForward,

    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("malformed {what}: {message}")]
    Malformed { what: String, message: String },

    /// A data record violates a documented invariant.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn malformed(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Malformed {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad input data rather than by the program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
