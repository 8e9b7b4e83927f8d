use super::{ModelConfig, ModelError, NegativeKernel, StructureEncoding};
use crate::autodiff::Tensor;
use crate::gckn::{embed_nodes, NystromEmbedding};
use crate::kernels::{all_ones, build_kernel, laplacian_pe};
use crate::{DenseMatrix, Graph, Scalar, Target};

/// Everything the model needs from one graph, computed once per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs<T> {
    pub n: usize,
    pub one_hot: DenseMatrix<T>,
    pub lappe: Option<DenseMatrix<T>>,
    pub gckn: Option<DenseMatrix<T>>,
    /// Non-negative attention kernel, all ones for the vanilla model.
    pub kernel: DenseMatrix<T>,
    /// Per-node multiplier of the attention residual.
    pub degree_scale: Vec<T>,
    pub target: Option<Target>,
}

pub fn one_hot<T: Scalar>(labels: &[usize], vocab: usize) -> Result<DenseMatrix<T>, ModelError> {
    let mut m = DenseMatrix::zeros(labels.len(), vocab);
    for (i, &l) in labels.iter().enumerate() {
        if l >= vocab {
            return Err(ModelError::LabelOutOfVocab { label: l, vocab });
        }
        m[(i, l)] = T::one();
    }
    Ok(m)
}

/// Clamps negative kernel entries to zero or rejects them. None of the
/// built-in families produce negatives for valid parameters; this guards
/// externally supplied kernels.
pub fn apply_negative_policy<T: Scalar>(kernel: &mut DenseMatrix<T>, policy: NegativeKernel) -> Result<(), ModelError> {
    let n = kernel.cols();
    for (idx, v) in kernel.as_mut_slice().iter_mut().enumerate() {
        if *v < T::zero() {
            match policy {
                NegativeKernel::Clamp => *v = T::zero(),
                NegativeKernel::Reject => return Err(ModelError::NegativeKernel { row: idx / n, col: idx % n, value: v.as_f64() }),
            }
        }
    }
    Ok(())
}

impl<T: Scalar> GraphInputs<T> {
    pub fn prepare(g: &Graph, cfg: &ModelConfig, gckn: Option<&NystromEmbedding<T>>) -> Result<Self, ModelError> {
        let n = g.n();
        let one_hot = one_hot(g.node_labels(), cfg.vocab)?;
        let (lappe, gckn) = match cfg.structure {
            StructureEncoding::None => (None, None),
            StructureEncoding::LapPe { k } => (Some(laplacian_pe::<T>(g, k)?.values), None),
            StructureEncoding::Gckn { path_size, filters, .. } => {
                let emb = gckn.ok_or(ModelError::MissingEmbedding)?;
                if emb.num_anchors() != filters {
                    return Err(ModelError::Config(format!(
                        "fitted path embedding has {} filters, config asks for {filters}",
                        emb.num_anchors()
                    )));
                }
                (None, Some(embed_nodes(g, emb, path_size)?.values))
            }
        };
        let mut kernel = match &cfg.kernel {
            Some(spec) => build_kernel::<T>(g, spec)?.values,
            None => all_ones::<T>(n).values,
        };
        apply_negative_policy(&mut kernel, cfg.negative_kernel)?;
        let degree_scale = if cfg.degree_scaling { g.inv_sqrt_degrees() } else { vec![T::one(); n] };
        Ok(Self { n, one_hot, lappe, gckn, kernel, degree_scale, target: g.target() })
    }

    pub fn feature_dim(&self) -> usize {
        self.one_hot.cols() + self.lappe.as_ref().map_or(0, DenseMatrix::cols) + self.gckn.as_ref().map_or(0, DenseMatrix::cols)
    }

    /// `[one-hot | LapPE·signs | path embedding]`, one row per node. Missing
    /// signs mean all `+1`.
    pub fn features(&self, signs: Option<&[T]>) -> Result<DenseMatrix<T>, ModelError> {
        if let (Some(s), Some(pe)) = (signs, &self.lappe) {
            if s.len() != pe.cols() {
                return Err(ModelError::Config(format!("{} sign flips for {} LapPE columns", s.len(), pe.cols())));
            }
        }
        let f = self.feature_dim();
        let mut out = DenseMatrix::zeros(self.n, f);
        for i in 0..self.n {
            let row = out.row_mut(i);
            let mut at = 0;
            row[..self.one_hot.cols()].copy_from_slice(self.one_hot.row(i));
            at += self.one_hot.cols();
            if let Some(pe) = &self.lappe {
                for (j, &x) in pe.row(i).iter().enumerate() {
                    row[at + j] = signs.map_or(x, |s| x * s[j]);
                }
                at += pe.cols();
            }
            if let Some(gk) = &self.gckn {
                row[at..at + gk.cols()].copy_from_slice(gk.row(i));
            }
        }
        Ok(out)
    }
}

/// Node features of one graph for the given configuration.
pub fn build_input_features<T: Scalar>(
    g: &Graph,
    cfg: &ModelConfig,
    gckn: Option<&NystromEmbedding<T>>,
    lappe_signs: Option<&[T]>,
) -> Result<DenseMatrix<T>, ModelError> {
    GraphInputs::prepare(g, cfg, gckn)?.features(lappe_signs)
}

/// Graphs padded to a common node count.
///
/// Padded kernel rows and columns are zero except a unit diagonal, so padded
/// positions attend only to themselves and are never attended to.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch<T> {
    /// `[B, N, f]`.
    pub features: Tensor<T>,
    /// `B·N` flags, true for real nodes.
    pub mask: Vec<bool>,
    /// `[B, N, N]`.
    pub kernel: Tensor<T>,
    /// `[B, N, 1]`, zero on padding.
    pub degree_scale: Tensor<T>,
    pub sizes: Vec<usize>,
    pub targets: Vec<Option<Target>>,
}

impl<T: Scalar> GraphBatch<T> {
    /// `signs[b]` are the LapPE sign flips of graph `b`.
    pub fn assemble(items: &[&GraphInputs<T>], signs: Option<&[Vec<T>]>) -> Result<Self, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let b = items.len();
        let n = items.iter().map(|g| g.n).max().unwrap_or(0);
        let f = items[0].feature_dim();
        let mut features = Tensor::zeros([b, n, f]);
        let mut kernel = Tensor::zeros([b, n, n]);
        let mut degree_scale = Tensor::zeros([b, n, 1]);
        let mut mask = vec![false; b * n];
        for (t, g) in items.iter().enumerate() {
            if g.feature_dim() != f {
                return Err(ModelError::Config(format!("graph {t} has feature width {}, expected {f}", g.feature_dim())));
            }
            let x = g.features(signs.map(|s| s[t].as_slice()))?;
            for i in 0..n {
                if i < g.n {
                    mask[t * n + i] = true;
                    degree_scale.set(t, i, 0, g.degree_scale[i]);
                    for k in 0..f {
                        features.set(t, i, k, x[(i, k)]);
                    }
                    for j in 0..g.n {
                        kernel.set(t, i, j, g.kernel[(i, j)]);
                    }
                } else {
                    kernel.set(t, i, i, T::one());
                }
            }
        }
        Ok(Self {
            features,
            mask,
            kernel,
            degree_scale,
            sizes: items.iter().map(|g| g.n).collect(),
            targets: items.iter().map(|g| g.target).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn max_nodes(&self) -> usize {
        self.features.shape()[1]
    }

    /// Kernel repeated once per head, in the `b·H + h` layout of split heads.
    pub fn kernel_per_head(&self, heads: usize) -> Tensor<T> {
        let [b, n, _] = self.kernel.shape();
        let block = n * n;
        let mut data = Vec::with_capacity(b * heads * block);
        for t in 0..b {
            for _ in 0..heads {
                data.extend_from_slice(&self.kernel.data()[t * block..(t + 1) * block]);
            }
        }
        Tensor::from_vec([b * heads, n, n], data)
    }
}
