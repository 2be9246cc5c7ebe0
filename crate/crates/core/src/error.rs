use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("time {time} is not on the grid (spacing {spacing})")]
    OffGrid { time: f64, spacing: f64 },

    #[error("non-finite state in {scheme} at path {path}, step {step}")]
    NonFinite {
        scheme: &'static str,
        path: usize,
        step: usize,
    },

    #[error("explicit scheme unstable for dt = {dt}; use dt <= {suggested}")]
    Unstable { dt: f64, suggested: f64 },

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn precondition(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Precondition(msg()))
    }
}
