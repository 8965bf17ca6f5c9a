use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid token: {0}")]
    InvalidToken(String),
    #[error("target of length {target_len} needs at least {needed} frames, got {frames}")]
    InfeasibleTarget {
        target_len: usize,
        needed: usize,
        frames: usize,
    },
    #[error("oracle instance too large: {0}")]
    OracleTooLarge(String),
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),
    #[error("length mismatch: predictions {predictions}, targets {targets}")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("fill returned {got} tokens for a sentence of length {expected}")]
    FillLengthMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite scores: {0}")]
    NonFiniteScores(String),
    #[error("sample skipped: {0}")]
    SampleSkipped(String),
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },
    #[error("reference sequence is empty")]
    DegenerateReference,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidLattice(_) => "InvalidLattice",
            Error::InvalidToken(_) => "InvalidToken",
            Error::InfeasibleTarget { .. } => "InfeasibleTarget",
            Error::OracleTooLarge(_) => "OracleTooLarge",
            Error::DegenerateInstance(_) => "DegenerateInstance",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::FillLengthMismatch { .. } => "FillLengthMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::NonFiniteScores(_) => "NonFiniteScores",
            Error::SampleSkipped(_) => "SampleSkipped",
            Error::TrainingDiverged { .. } => "TrainingDiverged",
            Error::DegenerateReference => "DegenerateReference",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "IoError",
            Error::Json(_) => "Json",
        }
    }
}
