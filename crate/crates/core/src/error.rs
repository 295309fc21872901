use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding has zero norm")]
    ZeroNormEmbedding,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("image shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("gradient access is not available in this session")]
    GradientUnavailable,

    #[error("loss became non-finite at evaluation {iteration}")]
    NonFiniteLoss { iteration: usize, trace: Vec<f64> },

    #[error("sample has zero variance")]
    DegenerateSample,

    #[error("sample of size {n} is too small (need at least {min})")]
    SampleTooSmall { n: usize, min: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("pool exhausted after {drawn} draws with {accepted} of {wanted} entries accepted")]
    PoolExhausted { drawn: u64, accepted: usize, wanted: usize },

    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),

    #[error("unsupported pool format version {found} (this build reads up to {supported})")]
    FormatVersionMismatch { found: u16, supported: u16 },

    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("query budget {q_max} does not exceed the selection cost {volume}")]
    BudgetTooSmall { q_max: u64, volume: u64 },

    #[error("every candidate refinement aborted")]
    AllCandidatesFailed,

    #[error("calibration set needs both genuine and impostor scores")]
    EmptyCalibration,

    #[error("need at least one identity with two or more images")]
    InsufficientImages,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("alternate image {index} of target {target} is the target image itself")]
    TargetLeak { target: usize, index: usize },

    #[error("adapter `{id}` failed: {message}")]
    Adapter { id: String, message: String },
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}
