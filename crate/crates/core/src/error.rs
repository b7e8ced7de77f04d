//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Incompatible tensor shapes; the message names both sides.
    Dimension(String),
    /// A numeric contract was violated (non-normalized input, non-finite value, ...).
    Contract(String),
    /// Invalid call sequence, e.g. a second backward without a grad reset.
    State(String),
    /// Bad configuration value.
    Config(String),
    /// Training diverged or could not proceed.
    Training(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Training(msg) => write!(f, "training error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
