use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    /// The loss (or a derived quantity) is undefined at the requested point.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    /// A run produced a NaN/inf; `step` is the iteration that produced it.
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: u64, what: String },

    #[error("no convergence after {iters} iterations (best estimate {best:e}, residual {residual:e})")]
    NoConvergence {
        iters: usize,
        best: f64,
        residual: f64,
    },

    #[error("projection onto the minimizer manifold failed after {steps} steps (final loss {loss:e})")]
    ProjectionFailed { steps: usize, loss: f64 },

    #[error("eigen-gap too small: {0}")]
    GapTooSmall(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("observer failed at step {step}: {source}")]
    Observer {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
