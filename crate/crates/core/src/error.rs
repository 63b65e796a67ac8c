use std::path::PathBuf;

use dws_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] AutodiffError),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("window too short: length {len}, minimum is {min}")]
    WindowTooShort { len: usize, min: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid profile field `{field}`: {msg}")]
    Profile { field: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("optimizer state error: {0}")]
    Optimizer(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged {
        epoch: usize,
        last_good: Option<PathBuf>,
    },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
