use thiserror::Error;

/// Errors raised by the geometry, decomposition and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("matrix is not positive definite (min eigenvalue {min_eig:.3e}, max eigenvalue {max_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64, max_eig: f64 },

    #[error("Kronecker MLE does not exist or could not be attained: {0}")]
    NoKroneckerMle(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("numerical rank deficiency: {0}")]
    NumericalRank(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by the numbers rather than by the caller's input shape or config.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NoKroneckerMle(_)
                | Error::Structure(_)
                | Error::NumericalRank(_)
                | Error::Convergence(_)
        )
    }
}
