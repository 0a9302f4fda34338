use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A closed-form entry point was called with parameters outside the
    /// canonical point (beta = eta = rho1 = rho2 = epsilon = 1, gamma = 0).
    #[error("closed-form solver requires canonical parameters, got {0}")]
    NonCanonical(String),

    #[error("operation needs an atom distribution; a mean-only distribution cannot resolve clipping masses")]
    UnsupportedDistribution,

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("finite oracle failed: {0}")]
    Oracle(String),

    /// The oracle converged but a unilateral deviation beats the declared tolerance.
    /// The uncertified result is kept for inspection.
    #[error("eps-Nash certificate failed: best unilateral gain {gain:e} exceeds {eps:e}")]
    NotCertified {
        gain: f64,
        eps: f64,
        result: Box<crate::oracle::OracleResult>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than a failing solve.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::NonCanonical(_)
                | Error::UnsupportedDistribution
                | Error::Io { .. }
                | Error::Csv(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure_input {
    ($cond:expr, $($arg:tt)+) => {
        if !($cond) {
            return Err($crate::error::Error::InvalidInput(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_input;
