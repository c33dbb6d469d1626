use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("label vocabulary mismatch: {0} vs {1} categories")]
    VocabMismatch(usize, usize),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("count {count} for category {category} exceeds total {total}")]
    CountExceedsTotal {
        category: usize,
        count: u64,
        total: u64,
    },

    #[error("rule set: {0}")]
    Rules(String),

    #[error("malformed numeric value {0:?}")]
    BadNumber(String),

    #[error("activation tape does not match encoder: {0}")]
    TapeMismatch(String),

    #[error("infeasible generator config: {0}")]
    Infeasible(String),

    #[error("mean label entropy target {target} unreachable (range {lo}..{hi})")]
    UnreachableTarget { target: f64, lo: f64, hi: f64 },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("non-finite loss at step {step}:\n{dump}")]
    NonFiniteLoss { step: u64, dump: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
