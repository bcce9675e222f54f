//! Update-command generation model: a transformer encoder over the action and
//! observation, an optional graph encoder over the prior belief graph, an
//! attention aggregator between the two, and a pointer-softmax decoder.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod train;

pub use layers::{EncoderVariant, GraphBatch};
pub use model::{Model, ModelConfig, SourceText, TrainingState};
pub use train::{train, LogEntry, TrainConfig, TrainOutcome};

use kgdelta_autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("target of {len} tokens exceeds max_decode_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("non-finite loss {loss} at step {step}: {detail}")]
    NonFiniteLoss { step: u64, loss: f32, detail: String },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training set is empty")]
    EmptyDataset,
}
