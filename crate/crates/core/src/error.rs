use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid input to an operation (bad index, dimension mismatch, non-physical spec).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A model configuration that cannot be represented faithfully (e.g. Bessel leakage).
    #[error("configuration error: {0}")]
    Configuration(String),
    /// Numerical or statistical failure detected at run time.
    #[error("diagnostic: {0}")]
    Diagnostic(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
