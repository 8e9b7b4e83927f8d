//! Reverse-mode differentiation over dense rank-3 tensors, with the Adam
//! optimizer, learning-rate schedules and a binary checkpoint container.

mod adam;
mod checkpoint;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::ParamStore;
pub use schedule::{LrSchedule, WARMUP_STEPS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: [usize; 3], right: [usize; 3] },
    #[error("row {row} of batch {batch} has zero l1 norm; attention row is empty")]
    ZeroRow { batch: usize, row: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 3] },
    #[error("cannot split width {width} into {heads} heads")]
    Heads { width: usize, heads: usize },
    #[error("{op}: mask has {got} entries, expected {expected}")]
    MaskLength { op: &'static str, expected: usize, got: usize },
    #[error("pooling over graph {batch} with no nodes")]
    EmptyPool { batch: usize },
    #[error("{op}: {count} targets for predictions of shape {shape:?}")]
    Targets { op: &'static str, shape: [usize; 3], count: usize },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("gradient for parameter `{name}` has shape {got:?}, expected {expected:?}")]
    GradientShape { name: String, expected: [usize; 3], got: [usize; 3] },
    #[error("{0} gradients for {1} parameters")]
    GradientCount(usize, usize),
}
