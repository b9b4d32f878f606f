use thiserror::Error;

/// Errors raised by the planning and localization stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The geometry of the correspondences does not determine a pose.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    /// RANSAC could not find a consensus set large enough to trust.
    #[error("localization failure: {0}")]
    LocalizationFailure(String),
    /// The fixed-lag smoother stopped making progress.
    #[error("smoother diverged: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
