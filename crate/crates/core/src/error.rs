use thiserror::Error;

/// Errors raised by the numerical routines and the scenario runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("range error: {what} (at t = {time})")]
    Range { what: String, time: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("point is within {tol} of the equator (s_n+1 = {last}); treat it as a point at infinity")]
    NearEquator { last: f64, tol: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("scenario error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn dim(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
