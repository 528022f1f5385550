use thiserror::Error;

/// Errors raised by the solvers and checks in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integrand is not finite at abscissa {abscissa}")]
    NonFiniteIntegrand { abscissa: f64 },

    #[error("numeric range exhausted at t = {time}: {detail}")]
    NumericRange { time: f64, detail: String },

    #[error("time step {requested} exceeds admissible step {admissible}")]
    StepSize { requested: f64, admissible: f64 },

    #[error("inadmissible jump: left trace {left} is below right trace {right}")]
    InadmissibleJump { left: f64, right: f64 },

    #[error("solution diverged at t = {time}: max |u| = {max_abs} exceeds {limit}")]
    Divergence { time: f64, max_abs: f64, limit: f64 },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("ambiguous result: {0}")]
    Ambiguous(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
