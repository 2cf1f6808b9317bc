//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by the workbench. Contract violations carry enough context
/// to report both sides of the mismatch.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph generation exhausted: achieved {achieved} of {target} vessels")]
    GraphTargetUnreachable { achieved: usize, target: usize },

    #[error("training diverged (non-finite loss) at phase {phase} epoch {epoch}")]
    Divergence { phase: u8, epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("block {index}: {source}")]
    Block {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Tag an error with the dataset block it occurred in.
    pub fn in_block(self, index: usize) -> Self {
        Error::Block {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
