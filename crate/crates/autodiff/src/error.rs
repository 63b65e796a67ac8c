use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    Shape { shape: Vec<usize>, len: usize },
    #[error("configuration error in {op}: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("input too short for {op}: length {len}, need at least {min}")]
    InputTooShort {
        op: &'static str,
        len: usize,
        min: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
