use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SctError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two operands have incompatible shapes.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A non-finite value appeared in an intermediate result.
    #[error("non-finite value at stage `{stage}`")]
    Numeric { stage: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step} (loss = {loss})")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    /// Malformed serialized input.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SctError>;

pub(crate) fn domain(msg: impl Into<String>) -> SctError {
    SctError::Domain(msg.into())
}

pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> SctError {
    SctError::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
