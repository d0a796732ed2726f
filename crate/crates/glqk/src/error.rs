//! Error type shared by every module in the crate.

use thiserror::Error;

/// Failure modes surfaced across the library and mapped to process exit codes
/// by the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied value is outside the documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An iterative or linear-algebra routine failed to converge or produced
    /// non-finite values.
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    /// Request exceeds a hard implementation cap (qubit count, subsystem size, ...).
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    /// An observable factor cannot be covered by any local window of the
    /// requested width.
    #[error("locality violation: {0}")]
    LocalityViolation(String),
    /// A score is undefined for the given data (e.g. constant targets).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// A file did not match the expected on-disk format.
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code used by the `glqk` binary: 2 invalid input, 3 numeric failure,
    /// 4 resource limit.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ResourceLimit(_) => 4,
            Error::NumericFailure(_) => 3,
            _ => 2,
        }
    }
}
