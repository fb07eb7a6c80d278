/// Errors raised by tensor operations, optimizers and checkpoint I/O.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: {message}")]
    Shape { op: &'static str, message: String },

    #[error("checkpoint parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, message: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        message: message.into(),
    }
}
