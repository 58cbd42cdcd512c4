use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, channel counts or flags.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse, e.g. differentiating a value that is not on the tape.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(format!($($arg)*))
    };
}
pub(crate) use config_err;
