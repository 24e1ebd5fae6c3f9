use thiserror::Error;

use crate::schemes::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scheme `{}` failed validation:\n{}", .0.scheme, .0)]
    InvalidScheme(Box<ValidationReport>),

    #[error("multiplier is infinite on active mode k = {k}; project the field first")]
    InfiniteSymbol { k: usize },

    #[error("quadrature did not reach tolerance {tol:e}: partial value {partial}, error estimate {estimate:e}")]
    Quadrature { partial: f64, estimate: f64, tol: f64 },

    #[error("non-finite state detected after t = {t_last}")]
    BlowUp { t_last: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
