//! Dense matrices, reverse-mode differentiation, and the Adam optimizer.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use tape::{log_sum_exp, segment_softmax, sigmoid, softmax, EdgeIndex, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
