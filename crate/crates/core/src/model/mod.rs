//! The GraphiT encoder.

mod config;
mod export;
mod graphit;
mod inputs;

pub use config::{ModelConfig, NegativeKernel, Pooling, StructureEncoding, Task};
pub use export::{read_attention, write_attention, AttentionExport, ExportError, ATTENTION_HEADER};
pub use graphit::{pos_attention, Forward, GraphiT};
pub use inputs::{apply_negative_policy, build_input_features, one_hot, GraphBatch, GraphInputs};

use crate::autodiff::AutodiffError;
use crate::gckn::GcknError;
use crate::kernels::KernelError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("node label {label} outside vocabulary of size {vocab}")]
    LabelOutOfVocab { label: usize, vocab: usize },
    #[error("structure encoding needs a fitted path embedding but none was given")]
    MissingEmbedding,
    #[error("kernel entry ({row}, {col}) is negative ({value}) and negative kernels are rejected")]
    NegativeKernel { row: usize, col: usize, value: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error(
        "attention row of node {node} in graph {graph} (layer {layer}, head {head}) is all zero; the kernel has no support on that row"
    )]
    EmptyAttention { graph: usize, node: usize, layer: usize, head: usize },
    #[error("batch target missing or of the wrong kind for graph {0}")]
    Target(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Gckn(#[from] GcknError),
}
