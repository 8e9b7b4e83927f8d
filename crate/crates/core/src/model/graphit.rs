use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GraphBatch, GraphInputs, ModelConfig, ModelError, Pooling, Task};
use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::{DenseMatrix, Scalar, Target};

const LAYER_PARAMS: [&str; 12] =
    ["w_q", "w_v", "w_o", "b_o", "ln1_gamma", "ln1_beta", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln2_gamma", "ln2_beta"];

/// Parameters and configuration of one GraphiT model.
///
/// Parameter order: `input.weight`, `input.bias`, then for each layer the
/// twelve `layer{l}.*` tensors (`w_q` through `ln2_beta`), then `head.weight`,
/// `head.bias`. Weights are `[1, fan_in, fan_out]` and act on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphiT<T> {
    cfg: ModelConfig,
    params: ParamStore<T>,
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    /// `[B, 1, C]` logits or `[B, 1, 1]` regression outputs.
    pub output: Var,
    /// Normalized attention per layer, `[B·H, N, N]`.
    pub attention: Vec<Var>,
}

/// Kernel-modulated attention on split heads `[B·H, N, d]`:
/// `normalize(exp(QQᵀ/√d) ⊙ K)·V` with ℓ1 row normalization. The logits are
/// shifted by their row maximum over the kernel support first, which the
/// normalization cancels. `kernel` is `[B·H, N, N]` and must be the value of
/// the constant `kernel_var`. Returns `(output, attention)`.
pub fn pos_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    v: Var,
    kernel: &Tensor<T>,
    kernel_var: Var,
) -> Result<(Var, Var), AutodiffError> {
    let d = tape.shape(q)[2];
    let logits = tape.matmul_nt(q, q)?;
    let logits = tape.scale(logits, T::one() / T::of(d as f64).sqrt());
    let shifted = tape.sub_row_max(logits, Some(kernel))?;
    let e = tape.exp(shifted);
    let weighted = tape.mul(e, kernel_var)?;
    let attn = tape.row_l1_normalize(weighted)?;
    let out = tape.matmul(attn, v)?;
    Ok((out, attn))
}

fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::of(rng.gen_range(-a..a))).collect();
    Tensor::from_vec([1, fan_in, fan_out], data)
}

impl<T: Scalar> GraphiT<T> {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate().map_err(ModelError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let h = cfg.ffn_hidden();
        let zeros = |c: usize| Tensor::zeros([1, 1, c]);
        let ones = |c: usize| Tensor::filled([1, 1, c], T::one());
        let mut p = ParamStore::new();
        p.add("input.weight", xavier(&mut rng, cfg.input_dim(), d));
        p.add("input.bias", zeros(d));
        for l in 0..cfg.layers {
            let name = |s: &str| format!("layer{l}.{s}");
            p.add(name("w_q"), xavier(&mut rng, d, d));
            p.add(name("w_v"), xavier(&mut rng, d, d));
            p.add(name("w_o"), xavier(&mut rng, d, d));
            p.add(name("b_o"), zeros(d));
            p.add(name("ln1_gamma"), ones(d));
            p.add(name("ln1_beta"), zeros(d));
            p.add(name("ffn_w1"), xavier(&mut rng, d, h));
            p.add(name("ffn_b1"), zeros(h));
            p.add(name("ffn_w2"), xavier(&mut rng, h, d));
            p.add(name("ffn_b2"), zeros(d));
            p.add(name("ln2_gamma"), ones(d));
            p.add(name("ln2_beta"), zeros(d));
        }
        p.add("head.weight", xavier(&mut rng, d, cfg.task.outputs()));
        p.add("head.bias", zeros(cfg.task.outputs()));
        Ok(Self { cfg, params: p })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        let fresh = Self::new(cfg.clone(), 0)?;
        if fresh.params.names() != params.names() {
            return Err(ModelError::Config("stored parameter names do not match the configuration".into()));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            if t.shape() != fresh.params.get(i).shape() {
                return Err(ModelError::Config(format!(
                    "parameter `{name}` has shape {:?}, configuration implies {:?}",
                    t.shape(),
                    fresh.params.get(i).shape()
                )));
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn layer_base(l: usize) -> usize {
        2 + l * LAYER_PARAMS.len()
    }

    /// Runs the encoder on `batch` with parameters already bound to `tape`
    /// as `vars` (see [`ParamStore::bind`]). Dropout is applied only when
    /// `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        batch: &GraphBatch<T>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward, ModelError> {
        let cfg = &self.cfg;
        let [b, n, f] = batch.features.shape();
        if f != cfg.input_dim() {
            return Err(ModelError::Config(format!("batch feature width {f}, model expects {}", cfg.input_dim())));
        }
        let heads = cfg.heads;
        let kh = batch.kernel_per_head(heads);
        let kh_var = tape.constant(kh.clone());
        let deg = tape.constant(batch.degree_scale.clone());
        let eps = T::of(cfg.layer_norm_eps);

        let x0 = tape.constant(batch.features.clone());
        let x = tape.matmul(x0, vars[0])?;
        let mut x = tape.add(x, vars[1])?;
        let mut attention = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = &vars[Self::layer_base(l)..Self::layer_base(l + 1)];
            // shared query/key projection
            let q = tape.matmul(x, p[0])?;
            let v = tape.matmul(x, p[1])?;
            let qh = tape.split_heads(q, heads)?;
            let vh = tape.split_heads(v, heads)?;
            let (o, attn) = pos_attention(tape, qh, vh, &kh, kh_var).map_err(|e| match e {
                AutodiffError::ZeroRow { batch: bh, row } => {
                    ModelError::EmptyAttention { graph: bh / heads, node: row, layer: l, head: bh % heads }
                }
                other => other.into(),
            })?;
            attention.push(attn);
            let o = tape.merge_heads(o, heads)?;
            let o = tape.matmul(o, p[2])?;
            let o = tape.add(o, p[3])?;
            let o = self.dropout(tape, o, dropout_rng.as_deref_mut())?;
            let o = tape.mul(o, deg)?;
            let r = tape.add(x, o)?;
            let r = tape.layer_norm(r, eps);
            let r = tape.mul(r, p[4])?;
            let r = tape.add(r, p[5])?;

            let hdn = tape.matmul(r, p[6])?;
            let hdn = tape.add(hdn, p[7])?;
            let hdn = tape.relu(hdn);
            let ff = tape.matmul(hdn, p[8])?;
            let ff = tape.add(ff, p[9])?;
            let ff = self.dropout(tape, ff, dropout_rng.as_deref_mut())?;
            let y = tape.add(r, ff)?;
            let y = tape.layer_norm(y, eps);
            let y = tape.mul(y, p[10])?;
            x = tape.add(y, p[11])?;
        }
        debug_assert_eq!(tape.shape(x), [b, n, cfg.d_model]);
        let pooled = match cfg.pooling {
            Pooling::Mean => tape.mean_nodes(x, &batch.mask)?,
            Pooling::Sum => tape.sum_nodes(x, &batch.mask)?,
            Pooling::Max => tape.max_nodes(x, &batch.mask)?,
        };
        let k = vars.len();
        let out = tape.matmul(pooled, vars[k - 2])?;
        let output = tape.add(out, vars[k - 1])?;
        Ok(Forward { output, attention })
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var, ModelError> {
        let p = self.cfg.dropout;
        let Some(rng) = rng.filter(|_| p > 0.0) else { return Ok(x) };
        let keep = T::of(1.0 / (1.0 - p));
        let shape = tape.shape(x);
        let n: usize = shape.iter().product();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let m = tape.constant(Tensor::from_vec(shape, mask));
        Ok(tape.mul(x, m)?)
    }

    /// Training loss of a forward output against the batch targets: mean
    /// cross-entropy for classification, mean absolute error for regression.
    pub fn loss(&self, tape: &mut Tape<T>, output: Var, batch: &GraphBatch<T>) -> Result<Var, ModelError> {
        match self.cfg.task {
            Task::Classify { .. } => {
                let ys = batch
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| match t {
                        Some(Target::Class(c)) => Ok(*c),
                        _ => Err(ModelError::Target(i)),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(tape.cross_entropy(output, &ys)?)
            }
            Task::Regress => {
                let ys = batch
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| match t {
                        Some(Target::Regression(y)) => Ok(T::of(*y)),
                        _ => Err(ModelError::Target(i)),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(tape.mae(output, &ys)?)
            }
        }
    }

    /// Loss value and gradients for every parameter, in parameter order.
    pub fn loss_and_gradients(
        &self,
        batch: &GraphBatch<T>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(T, Vec<Tensor<T>>), ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let fwd = self.forward(&mut tape, &vars, batch, dropout_rng)?;
        let loss = self.loss(&mut tape, fwd.output, batch)?;
        let mut grads = tape.backward(loss)?;
        let g = vars.iter().zip(self.params.values()).map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape()))).collect();
        Ok((tape.value(loss).item(), g))
    }

    /// Loss only, without recording gradients.
    pub fn eval_loss(&self, batch: &GraphBatch<T>) -> Result<T, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let fwd = self.forward(&mut tape, &vars, batch, None)?;
        let loss = self.loss(&mut tape, fwd.output, batch)?;
        Ok(tape.value(loss).item())
    }

    /// Evaluation-mode outputs, `[B, 1, C]` or `[B, 1, 1]`.
    pub fn predict(&self, batch: &GraphBatch<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let fwd = self.forward(&mut tape, &vars, batch, None)?;
        Ok(tape.value(fwd.output).clone())
    }

    /// Post-normalization attention of each layer on one graph, averaged
    /// over heads. LapPE signs are all `+1`.
    pub fn export_attention(&self, inputs: &GraphInputs<T>) -> Result<Vec<DenseMatrix<T>>, ModelError> {
        let batch = GraphBatch::assemble(&[inputs], None)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let fwd = self.forward(&mut tape, &vars, &batch, None)?;
        let heads = self.cfg.heads;
        let inv = T::one() / T::of(heads as f64);
        Ok(fwd
            .attention
            .iter()
            .map(|&a| {
                let a = tape.value(a);
                DenseMatrix::from_fn(inputs.n, inputs.n, |i, j| (0..heads).map(|h| a.get(h, i, j)).sum::<T>() * inv)
            })
            .collect())
    }
}
