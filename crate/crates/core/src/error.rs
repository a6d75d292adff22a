use thiserror::Error;

use crate::sim::SimTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot fit a model to an empty sample set")]
    EmptySamples,

    #[error("no variable has any samples")]
    EmptyState,

    #[error("constraints are infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge within {iterations} sweeps (max violation {violation:e})")]
    NonConvergence {
        iterations: usize,
        violation: f64,
        best: Vec<f64>,
    },

    #[error("operation requires chain constraints")]
    UnsupportedConstraints,

    #[error("answer source failed at step {step}: {message}")]
    AnswerSource {
        step: usize,
        message: String,
        trace: Box<SimTrace>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
