//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Incompatible shapes or sizes passed to a numeric operation.
    Dimension(String),
    /// A value or argument outside its documented domain.
    Invalid(String),
    /// Attempt to mutate or re-train a frozen module.
    Frozen(String),
    /// A path referenced modules that do not exist or do not compose.
    Path(String),
    /// A task was committed twice, or learned out of order.
    Protocol(String),
    /// Malformed binary input (IDX files, snapshots); offset is where parsing stopped.
    Format { offset: usize, message: String },
    /// Configuration problems, collected exhaustively before any work starts.
    Config(Vec<String>),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension mismatch: {m}"),
            Error::Invalid(m) => write!(f, "invalid argument: {m}"),
            Error::Frozen(m) => write!(f, "frozen module: {m}"),
            Error::Path(m) => write!(f, "invalid path: {m}"),
            Error::Protocol(m) => write!(f, "protocol violation: {m}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Config(errs) => {
                writeln!(f, "configuration invalid ({} problem(s)):", errs.len())?;
                for e in errs {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
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
