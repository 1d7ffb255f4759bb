use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The CLI maps [`Error::Config`] and [`Error::Parse`] to exit code 2 and
/// [`Error::Numerical`] to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// An inconsistent or unsupported configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Numerical("x".into()).exit_code(), 3);
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Parse("x".into()).exit_code(), 2);
        assert_eq!(Error::Domain("x".into()).exit_code(), 2);
    }
}
