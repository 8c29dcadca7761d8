use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("point {coords:?} lies outside the parameter cube [-1, 1]^n")]
    OutsideCube { coords: Vec<f64> },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("eigensolve failed: {0}")]
    Eigensolve(String),

    #[error("KL eigenvalue {index} is not positive ({value:e}); refine the quadrature grid or reduce n_nu")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("mesh size h = {h} does not align with the obstacle geometry")]
    MeshAlignment { h: f64 },

    #[error("sparse factorization of the {block} block failed: {reason}")]
    Factorization { block: &'static str, reason: String },

    #[error("densification of {entries} entries exceeds the guard of {limit}")]
    TooLarge { entries: usize, limit: usize },

    #[error("nonlinear iteration did not converge after {steps} steps (residuals {history:?})")]
    NonConvergence { steps: usize, history: Vec<f64> },

    #[error("{failed} of {total} Monte Carlo samples failed, above the 1% budget")]
    MonteCarloFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(context: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
