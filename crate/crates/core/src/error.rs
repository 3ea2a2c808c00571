use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate attention row {row}")]
    DegenerateRow { row: usize },

    #[error("loss is not a scalar (shape {rows}x{cols})")]
    NotScalar { rows: usize, cols: usize },

    #[error("learning-rate schedule is undefined at step 0")]
    ZeroStep,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence length {len} exceeds the configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("block {index} is inactive")]
    InactiveBlock { index: usize },

    #[error("cannot mask the last active block of layer {layer}")]
    LastActiveBlock { layer: usize },

    #[error("index {index} out of range ({len} available)")]
    Index { index: usize, len: usize },

    #[error("training diverged: loss {loss} at step {step}")]
    Diverged { step: u64, loss: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("search: {0}")]
    Search(String),

    #[error("task generation: {0}")]
    Generation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
