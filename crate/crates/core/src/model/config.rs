use std::fmt;
use std::str::FromStr;

use crate::kernels::{KernelFamily, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Sum,
    Max,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Sum => "sum",
            Pooling::Max => "max",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            "max" => Ok(Pooling::Max),
            _ => Err(format!("unknown pooling `{s}` (expected mean, sum or max)")),
        }
    }
}

/// Extra node features concatenated to the one-hot labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StructureEncoding {
    None,
    /// First `k` non-trivial Laplacian eigenvectors.
    LapPe {
        k: usize,
    },
    /// Path-kernel node embedding over paths of up to `path_size` nodes.
    Gckn {
        path_size: usize,
        filters: usize,
        sigma: f64,
    },
}

impl StructureEncoding {
    pub fn width(&self) -> usize {
        match *self {
            StructureEncoding::None => 0,
            StructureEncoding::LapPe { k } => k,
            StructureEncoding::Gckn { filters, .. } => filters,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StructureEncoding::None => "none",
            StructureEncoding::LapPe { .. } => "lappe",
            StructureEncoding::Gckn { .. } => "gckn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify { classes: usize },
    Regress,
}

impl Task {
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Classify { classes } => classes,
            Task::Regress => 1,
        }
    }
}

/// What to do with negative kernel entries, which have no meaning as
/// attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKernel {
    Clamp,
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub pooling: Pooling,
    /// `None` is the vanilla transformer (plain softmax attention).
    pub kernel: Option<KernelSpec>,
    pub structure: StructureEncoding,
    /// Scale the attention residual by `deg^{-1/2}` per node.
    pub degree_scaling: bool,
    pub task: Task,
    /// Number of distinct node labels (one-hot width).
    pub vocab: usize,
    pub negative_kernel: NegativeKernel,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Defaults: mean pooling, no structure encoding, degree scaling on
    /// exactly when a kernel is given, no dropout.
    pub fn new(layers: usize, heads: usize, d_model: usize, kernel: Option<KernelSpec>, task: Task, vocab: usize) -> Self {
        Self {
            layers,
            heads,
            d_model,
            pooling: Pooling::Mean,
            degree_scaling: kernel.is_some(),
            kernel,
            structure: StructureEncoding::None,
            task,
            vocab,
            negative_kernel: NegativeKernel::Clamp,
            dropout: 0.0,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn ffn_hidden(&self) -> usize {
        2 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn input_dim(&self) -> usize {
        self.vocab + self.structure.width()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err("layers must be at least 1".into());
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.vocab == 0 {
            return Err("node label vocabulary is empty".into());
        }
        if let Task::Classify { classes } = self.task {
            if classes < 2 {
                return Err(format!("classification needs at least 2 classes, got {classes}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err("layer_norm_eps must be positive".into());
        }
        if let Some(k) = &self.kernel {
            k.validate().map_err(|e| e.to_string())?;
        }
        match self.structure {
            StructureEncoding::LapPe { k: 0 } => Err("lappe dimension must be at least 1".into()),
            StructureEncoding::Gckn { path_size, filters, sigma } if path_size == 0 || filters == 0 || !(sigma > 0.0) => {
                Err(format!("invalid gckn settings: path_size={path_size} filters={filters} sigma={sigma}"))
            }
            _ => Ok(()),
        }
    }

    /// Short label for the relative encoding, used in result tables.
    pub fn kernel_label(&self) -> String {
        match &self.kernel {
            None => "none".into(),
            Some(k) => match k.family {
                KernelFamily::Diffusion { .. } => "diffusion".into(),
                KernelFamily::PStepRw { p, .. } => format!("{p}-step RW"),
                KernelFamily::Adjacency => "adj".into(),
                KernelFamily::AllOnes => "allones".into(),
            },
        }
    }
}
