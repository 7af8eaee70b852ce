use thiserror::Error;

pub type Result<T, E = TdpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TdpError {
    #[error("column {0} has zero variance; drop or impute it before standardizing")]
    ZeroVarianceColumn(usize),

    #[error("target range is degenerate (max == min)")]
    DegenerateRange,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot compose an empty list of budgets")]
    EmptyList,

    #[error("projection V^T R has numerical rank {rank}, need {required}")]
    RankDeficientProjection { rank: usize, required: usize },

    #[error("input has {actual} rows, need at least {required}")]
    TooFewRows { actual: usize, required: usize },

    #[error("input rows are not inside the unit L2 ball; clip them first")]
    NotInUnitBall,

    #[error("linear system is singular")]
    SingularSystem,

    #[error("solver did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("ledger has no entry for applicant {0}")]
    MissingLedgerEntry(usize),

    #[error("relative change is undefined for a zero baseline")]
    ZeroBaseline,

    #[error("holdout of {holdout} rows leaves no working set out of {rows}")]
    HoldoutTooLarge { holdout: usize, rows: usize },

    #[error("moment matching failed: {0}")]
    MomentMatchFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl TdpError {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        TdpError::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TdpError::InvalidParameter(msg.into())
    }
}
