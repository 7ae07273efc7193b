use thiserror::Error;

/// Errors raised by the simulator's operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unsupported scenario: {0}")]
    Unsupported(String),

    #[error("bifurcation inconsistent with state: recorded p = {recorded}, state has p = {actual}")]
    InconsistentBifurcation { recorded: f64, actual: f64 },

    #[error("instance too large: {0}")]
    TooLarge(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
