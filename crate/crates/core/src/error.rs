use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid functions live on different grids")]
    GridMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance factorization failed for ell={ell} even with jitter {jitter:e}")]
    DegenerateCovariance { ell: f64, jitter: f64 },

    #[error("quadratic form has imaginary part {imag:e} against real part {real:e}; operator is not self-adjoint")]
    NotSelfAdjoint { real: f64, imag: f64 },

    #[error("kernel is not positive semidefinite: min eigenvalue {min:e}, max eigenvalue {max:e}")]
    NotPositiveSemidefinite { min: f64, max: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("problem too large for the dense path: {0}")]
    TooLarge(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
