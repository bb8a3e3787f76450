use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph would have {requested} vertices, above the cap of {cap}")]
    GraphTooLarge { requested: u128, cap: usize },

    #[error("base graph has no root")]
    MissingRoot,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("expected {expected:.0} field events, above the cap of {cap}")]
    FieldTooLarge { expected: f64, cap: f64 },

    #[error("rate {lambda} exceeds the field's maximum rate {lambda_max}")]
    RateAboveFieldMax { lambda: f64, lambda_max: f64 },

    #[error("model has {vertices} vertices, above the oracle cap of {cap}")]
    OracleTooLarge { vertices: usize, cap: usize },

    #[error("oracle linear system is singular")]
    SingularSystem,

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("conditioning too rare: {accepted} of {proposed} replicas accepted")]
    ConditioningTooRare { accepted: usize, proposed: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for outcomes that are neither a pass nor a failure.
    pub fn is_inconclusive(&self) -> bool {
        matches!(self, Error::Inconclusive(_) | Error::ConditioningTooRare { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
