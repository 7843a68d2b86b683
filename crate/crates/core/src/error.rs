use thiserror::Error;

/// Errors produced by parameter validation, simulation and numerics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid tail vector: {0}")]
    InvalidTail(String),

    #[error("invalid count tail: {0}")]
    InvalidCounts(String),

    #[error("cannot allocate state for n = {n} queues")]
    Allocation { n: usize },

    #[error("step-size failure at t = {t}: component {k} = {value} left [-1e-6, 1 + 1e-6]")]
    StepSize { t: f64, k: usize, value: f64 },

    #[error("fixed point underflowed at k = {reached} before requested k = {requested}")]
    Underflow { reached: usize, requested: usize },

    #[error("I/O failure: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
