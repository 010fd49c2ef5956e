use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Caller violated an operation precondition (shapes, ranges, empty input).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input is well-formed but mathematically degenerate (e.g. zero-norm beat).
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested target cannot be met (sensitivity, partition constraint, ...).
    #[error("constraint unmet: {0}")]
    Constraint(String),

    #[error("malformed bitstream at bit {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
