use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The `j`-th Cholesky pivot was nonpositive or non-finite.
    #[error("matrix is not positive definite (pivot {0})")]
    NotSpd(usize),

    #[error("singular triangular factor (zero diagonal at {0})")]
    Singular(usize),

    #[error("dense symmetric eigensolver did not converge in {0} sweeps")]
    NoConvergence(usize),

    /// `pᵀAp <= 0` inside conjugate gradients.
    #[error("conjugate gradient breakdown at iteration {0}")]
    Breakdown(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("operator failed: {0}")]
    Operator(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed file: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn dim_mismatch(what: impl Into<String>) -> Error {
    Error::DimensionMismatch(what.into())
}
