use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample rate {actual} Hz does not match the filter design rate {expected} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("threshold cannot be trained: {0}")]
    Untrainable(String),

    #[error("coordinate out of range: {0}")]
    OutOfRange(String),

    #[error("malformed grid reference {0:?}")]
    MalformedMgrs(String),

    #[error("profile has undefined cells")]
    UndefinedCells,

    #[error("lattice mismatch")]
    LatticeMismatch,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("degenerate sample set: {0}")]
    Degenerate(String),

    #[error("covariance matrix not positive definite after jitter {0:e}")]
    NotPositiveDefinite(f64),

    #[error("infeasible profile spec: {0}")]
    Infeasible(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::SampleRateMismatch { .. } => "sample_rate_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Calibration(_) => "calibration_failed",
            Error::Untrainable(_) => "untrainable",
            Error::OutOfRange(_) => "out_of_range",
            Error::MalformedMgrs(_) => "malformed_mgrs",
            Error::UndefinedCells => "undefined_cells",
            Error::LatticeMismatch => "lattice_mismatch",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::Degenerate(_) => "degenerate",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::Infeasible(_) => "infeasible",
            Error::Wav(_) => "wav",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
