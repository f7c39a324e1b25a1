use thiserror::Error;

/// Errors raised by the library. The variants are grouped so the CLI can map
/// them onto exit codes: input and invariant problems versus numerical
/// breakdowns.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or dimensions do not line up.
    #[error("structural error: {0}")]
    Structural(String),
    /// A value violates a mathematical precondition (not positive, not a projection, ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("certificate error: {0}")]
    Certificate(String),
    /// A quantity that must agree with another one failed to do so.
    #[error("inconsistency: {0}")]
    Inconsistency(String),
    #[error("extraction error: {0}")]
    Extraction(String),
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of numerical procedures rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Inconsistency(_) | Error::Extraction(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
