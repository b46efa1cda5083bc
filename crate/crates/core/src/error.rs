use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not unitary (max |U^dag U - I| = {residual:.3e})")]
    NotUnitary { residual: f64 },
    #[error("fidelity undefined for a zero matrix")]
    UndefinedFidelity,
    #[error("cannot canonicalize: zero entry at ({row}, {col})")]
    CannotCanonicalize { row: usize, col: usize },
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("visibility undefined: side-peak denominator {denominator:.3e} below floor")]
    UndefinedVisibility { denominator: f64 },
    #[error("degenerate splitter: R*T = 0")]
    DegenerateSplitter,
    #[error("sinkhorn scaling did not converge after {iterations} iterations (residual {residual:.3e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid histogram window: {0}")]
    InvalidWindow(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("distribution not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid-dimension",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NotUnitary { .. } => "not-unitary",
            Error::UndefinedFidelity => "undefined-fidelity",
            Error::CannotCanonicalize { .. } => "cannot-canonicalize",
            Error::OutOfRange(_) => "out-of-range",
            Error::UndefinedVisibility { .. } => "undefined-visibility",
            Error::DegenerateSplitter => "degenerate-splitter",
            Error::SinkhornNotConverged { .. } => "convergence-failure",
            Error::InsufficientData(_) => "insufficient-data",
            Error::InvalidWindow(_) => "invalid-window",
            Error::InvalidData(_) => "invalid-data",
            Error::NotNormalized { .. } => "normalization",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by bad input values rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::SinkhornNotConverged { .. } | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
