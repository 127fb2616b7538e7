use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric instability: {0}")]
    NumericInstability(String),
    #[error("insufficient acceptance: only {accepted} of {required} pairs accepted")]
    InsufficientAcceptance { accepted: usize, required: usize },
    #[error("hinge kink proximity: margin {margin:e} is within {threshold:e} of the kink")]
    KinkProximity { margin: f64, threshold: f64 },
    #[error("empty labeled set")]
    EmptyLabeledSet,
    #[error("batch size {batch} exceeds unlabeled pool size {available}")]
    BatchSize { batch: usize, available: usize },
    #[error("sample size {got} is below the minimum of {min}")]
    SampleSize { got: usize, min: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
