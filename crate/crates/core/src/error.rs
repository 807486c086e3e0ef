use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input, shape, or configuration. Maps to CLI exit code 1.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    /// A training failure inside a larger job (ensemble member, CV fold, ...).
    #[error("{context}: {source}")]
    Nested {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("bundle: {0}")]
    Bundle(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn context(self, ctx: impl Into<String>) -> Self {
        Error::Nested {
            context: ctx.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than by a run.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_) | Error::Dimension { .. } | Error::Csv { .. } | Error::Json(_) => true,
            Error::Nested { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got,
            context,
        })
    }
}
