use std::path::PathBuf;

use sdtl_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdtlError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// Tensor shapes that violate a module contract.
    #[error("dimension error: {0}")]
    Shape(String),
    /// Hyperparameters or sizes that cannot form a valid model or run.
    #[error("configuration error: {0}")]
    Config(String),
    /// Call made outside its documented domain (timestep range, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Bad user-provided data (empty dataset, image smaller than crop, ...).
    #[error("input error: {0}")]
    Input(String),
    #[error("{path}: parse error at byte {offset}: {msg}")]
    Parse {
        path: PathBuf,
        offset: usize,
        msg: String,
    },
    #[error("{path}: unsupported format: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SdtlError> = std::result::Result<T, E>;

impl SdtlError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SdtlError::Io {
            path: path.into(),
            source,
        }
    }
}
