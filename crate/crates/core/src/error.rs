use thiserror::Error;

/// Errors raised by the model, solvers and the batch front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("nested default coupling needs pd(L2) >= pd(L1), got pd(L1)={pd1}, pd(L2)={pd2}")]
    CouplingInfeasible { pd1: f64, pd2: f64 },

    #[error("risk-neutral calibration infeasible for loan {loan}: {reason}")]
    CalibrationInfeasible { loan: usize, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),

    #[error("no feasible point found: {0}")]
    Infeasible(String),

    #[error("grid of {points} points exceeds the evaluation budget of {budget}")]
    BudgetExceeded { points: u128, budget: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_param(name: &'static str, ok: bool, reason: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: reason() })
    }
}
