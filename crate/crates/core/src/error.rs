use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} is not positive definite (smallest eigenvalue {eigenvalue:.6e})")]
    NotPositiveDefinite { what: &'static str, eigenvalue: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    Asymmetric { max_asymmetry: f64 },

    #[error("invalid time interval: t={t} is not before T={horizon}")]
    InvalidInterval { t: f64, horizon: f64 },

    #[error("value function is not concave in wealth at t={t} (I={curvature:.6e})")]
    NotConcave { t: f64, curvature: f64 },

    #[error("insufficient data: need {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate computation: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } | Error::Asymmetric { .. } => "matrix",
            Error::DimensionMismatch { .. } => "dimension",
            Error::InvalidInterval { .. } | Error::InvalidInput(_) => "input",
            Error::NotConcave { .. } | Error::Degenerate(_) => "numeric",
            Error::InsufficientData { .. } => "data",
            Error::Row { .. } | Error::Csv(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
