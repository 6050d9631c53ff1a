use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel width {0}: must be positive and finite")]
    InvalidWidth(f64),

    #[error("degenerate kernel: k'(lambda-1) + k'(lambda) is zero at lambda_a = {lambda_a}")]
    DegenerateKernel { lambda_a: f64 },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("split sizes {requested} exceed dataset size {available}")]
    SplitOverflow { requested: usize, available: usize },

    #[error("per-step invariant violated at iteration {iteration}: {detail}")]
    Invariant { iteration: usize, detail: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
