use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value produced by layer {layer} ({kind}) during {pass}")]
    NonFinite {
        layer: usize,
        kind: &'static str,
        pass: &'static str,
    },
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("model container format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> NnError {
    NnError::Shape {
        context: context.into(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
