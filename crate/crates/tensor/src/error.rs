use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named op.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Parameters that cannot produce a well-formed result (kernel size,
    /// stride, axis out of range, ...).
    #[error("{op}: invalid configuration: {msg}")]
    Config { op: &'static str, msg: String },
    /// Violated call contract, e.g. `backward` on a non-scalar.
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn config_err(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Config {
        op,
        msg: msg.into(),
    }
}
