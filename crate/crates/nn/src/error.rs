use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel size {0} is even; only odd kernels keep the length")]
    EvenKernel(usize),
    #[error("batch normalization needs at least 2 values per channel in train mode, got {0}")]
    DegenerateBatch(usize),
    #[error("dropout rate {0} outside [0, 1)")]
    BadRate(f64),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("backward called before forward")]
    NoCache,
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}
