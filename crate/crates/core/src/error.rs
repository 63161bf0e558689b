use thiserror::Error;

/// Errors raised by the solvers, generators and command surface.
#[derive(Debug, Error)]
pub enum MmError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A Gram matrix could not be Cholesky factorized.
    #[error("factorization failed: {0}; consider supplying a small positive ridge")]
    Factorization(String),

    /// A cached factor required by the call was never computed.
    #[error("state error: {0}")]
    State(String),

    /// A linear system is singular for the requested shift.
    #[error("singular system: {0}")]
    Singular(String),

    /// The objective became NaN or infinite.
    #[error("numerical failure at iteration {iter}: {message}")]
    Numerical { iter: usize, message: String, snapshot: Vec<f64> },

    /// Coefficients diverged, typically from perfectly separated classes.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Malformed or inconsistent input files and flags.
    #[error("input error: {0}")]
    Input(String),

    /// The iteration budget was exhausted before the stopping rule fired.
    #[error("did not converge within {0} iterations")]
    NotConverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MmError>;

impl MmError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        MmError::Domain(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        MmError::Input(msg.into())
    }
}
