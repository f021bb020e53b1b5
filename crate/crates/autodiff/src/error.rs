use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape error: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: degenerate batch, need at least 2 values per channel but got {count}")]
    DegenerateBatch { op: &'static str, count: usize },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("{op}: invalid target: {detail}")]
    InvalidTarget { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
