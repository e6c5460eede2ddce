use thiserror::Error;

/// Errors raised by mesh construction, assembly, time stepping and the
/// reconstruction pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular or unstable factorization at row {row} (pivot {pivot:.3e})")]
    SingularPivot { row: usize, pivot: f64 },

    #[error("non-finite value encountered at time step {step}")]
    NonFinite { step: usize },

    #[error("sigma(T) vanishes; the reconstruction identities require sigma(T) != 0")]
    SigmaTerminalZero,

    #[error("|sigma(0)| = {0:.3e} is below threshold: first-kind Volterra regime unsupported")]
    FirstKindVolterra(f64),

    #[error("null-control CG stagnated after {iterations} iterations (relative residual {residual:.3e}, terminal residual {terminal_residual:.3e})")]
    ControlStagnation {
        iterations: usize,
        residual: f64,
        terminal_residual: f64,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
