//! Dense `f32` tensors with tape-based reverse-mode differentiation.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_inputs, grad_check_vjp, GradCheckOptions, GradCheckReport};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use params::{Bound, GradBuffer, ParamId, ParamStore};
pub use tape::{Gradients, Sparse, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range in {op} (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("no tape to differentiate: backward already ran or gradients are disabled")]
    NoTape,
    #[error("backward needs a single-element loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
