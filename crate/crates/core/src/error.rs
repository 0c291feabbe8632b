use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Mathematical check failures are not errors: they are carried in reports.
/// An `Error` means an operation could not be carried out at all.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("element is not in the span (residual {residual:.3e})")]
    NotInSpan { residual: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
