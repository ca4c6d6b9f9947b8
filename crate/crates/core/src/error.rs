use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A ray or segment query reached into the truncated part of the horizon.
    #[error("requested length {requested} exceeds the truncation-safe bound {safe_bound}")]
    OutOfRange { requested: f64, safe_bound: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
