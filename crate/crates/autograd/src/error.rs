use thiserror::Error;

/// Raised when operand shapes are incompatible with an operation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{op}: {detail}")]
pub struct ShapeError {
    pub op: &'static str,
    pub detail: String,
}

impl ShapeError {
    pub fn new(op: &'static str, detail: impl Into<String>) -> Self {
        Self {
            op,
            detail: detail.into(),
        }
    }
}
