use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvilError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("non-finite value: {0}")]
    UnitError(String),
    #[error("degenerate object `{0}`: all candidates coincide")]
    DegenerateObject(String),
    #[error("insufficient candidates: need {needed}, have {available}")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("missing correspondence for descriptor {0}")]
    MissingCorrespondence(u64),
    #[error("one-shot extraction requires exactly one demonstration, got {0}")]
    NotOneShot(usize),
    #[error("principal manifold fit diverged after {0} iterations")]
    FitDiverged(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("chart coordinate outside the fitted domain")]
    OutOfChart,
    #[error("kernel design matrix is rank deficient")]
    RankDeficient,
    #[error("density model needs at least two targets, got {0}")]
    InsufficientTargets(usize),
    #[error("priority sphere radius below 1e-9")]
    DegenerateRadius,
    #[error("numerical blow-up at step {step}: state norm {norm:e}")]
    NumericalBlowup { step: usize, norm: f64 },
    #[error("synthetic task incompatible: {0}")]
    SpecIncompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for KvilError {
    fn from(err: serde_json::Error) -> Self {
        KvilError::ParseError(err.to_string())
    }
}

pub type Result<T, E = KvilError> = std::result::Result<T, E>;
