use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty environment")]
    EmptyEnvironment,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("zero propensity")]
    ZeroPropensity,

    #[error("C1 violation at sample {index}: h = {value}, lower limit p*c/q = {lower}")]
    C1Violation { index: usize, value: f64, lower: f64 },

    #[error("degenerate SN denominator")]
    DegenerateSnDenominator,

    #[error("moment order must be >= 2, got {0}")]
    MomentOrder(u32),

    #[error("needs n >= 2, got n = {0}")]
    TooFewSamples(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid record at row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },

    #[error("zero-norm context")]
    ZeroNormContext,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("duplicate candidate name {0:?}")]
    DuplicateCandidate(String),

    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),

    #[error("ideal behavior policy")]
    IdealBehaviorPolicy,

    #[error("undefined radius")]
    UndefinedRadius,

    #[error("non-finite gradient at epoch {epoch}")]
    NonFiniteGradient { epoch: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("split {index} would receive 0 rows")]
    EmptySplit { index: usize },

    #[error("context carries no label; label-based policies and environments need one")]
    MissingLabel,

    #[error("parse error at row {row}: {reason}")]
    Parse { row: usize, reason: String },

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
