use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dangling continuation token `{0}` at end of sequence")]
    DanglingContinuation(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),

    #[error("malformed {what} in {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("stage ({stage}): {reason}")]
    Stage { stage: char, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            reason: reason.into(),
        }
    }
}
