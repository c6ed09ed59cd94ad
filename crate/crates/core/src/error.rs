use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("batch loss must be finite and nonnegative, got {0}")]
    InvalidLoss(f64),
    #[error("warmup-cosine schedule exhausted: step {step} >= total_steps {total}")]
    Exhausted { step: u64, total: u64 },
    #[error("invalid schedule parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("malformed schedule state at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(
        "parameter dimension {dim} exceeds the dense cap {cap}; use the gradient or \
         Hessian-vector-product paths instead"
    )]
    TooLarge { dim: usize, cap: usize },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("batch kind does not match architecture {0}")]
    KindMismatch(&'static str),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("target distribution does not sum to one (sum = {0})")]
    NotNormalized(f64),
    #[error("negative or non-finite target probability {0}")]
    BadProbability(f64),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("token id {token} out of range for vocabulary {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("sequence must contain at least one token")]
    EmptySequence,
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run diverged at step {step} (last good record: {last_good:?}): {what}")]
    Diverged {
        step: usize,
        last_good: Option<usize>,
        what: String,
    },
    #[error("no match within budget: {0}")]
    Incomparable(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("trajectory precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lab(#[from] LabError),
}
