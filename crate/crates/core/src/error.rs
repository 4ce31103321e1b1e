use thiserror::Error;

use crate::sim_engine::Trace;

#[derive(Debug, Error)]
pub enum PfcError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("unknown parameter path `{0}`")]
    UnknownPath(String),

    #[error("window [{start}, {end}] is not an integer number of line periods")]
    WindowMisaligned { start: f64, end: f64 },

    #[error("trace does not cover window [{start}, {end}]")]
    WindowOutOfRange { start: f64, end: f64 },

    #[error("fundamental component is zero; ratio metrics undefined")]
    DegenerateFundamental,

    #[error("trace too short: {0}")]
    TraceTooShort(String),

    #[error("numerical abort at t = {time}: non-finite state")]
    NumericalAbort { time: f64, partial: Box<Trace> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PfcError>;
