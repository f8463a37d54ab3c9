use std::path::PathBuf;

use lbanp_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NpError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NpError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite values or failed factorizations.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            NpError::Numeric(_) | NpError::Tensor(TensorError::Numeric { .. })
        )
    }
}

pub type Result<T> = std::result::Result<T, NpError>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(NpError::Contract(msg.into()))
}
