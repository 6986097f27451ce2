use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum CobraError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("index {index} out of range for {bound} rows")]
    Index { index: usize, bound: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("subject {0} is not registered")]
    Routing(u32),

    #[error("config error: {0}")]
    Config(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CobraError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        CobraError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = CobraError> = std::result::Result<T, E>;
