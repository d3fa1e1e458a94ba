use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("{family} needs at least {min} nodes, got {got}")]
    SizeTooSmall {
        family: &'static str,
        min: usize,
        got: usize,
    },

    #[error("unknown site `{0}`")]
    UnknownSite(String),

    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),

    #[error("enumeration refused: {0}")]
    EnumerationRefused(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate evidence: every importance weight is zero")]
    DegenerateWeights,

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numeric failures (NaN/inf, degenerate weights) as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::DegenerateWeights | Error::ZeroVariance(_)
        )
    }
}
