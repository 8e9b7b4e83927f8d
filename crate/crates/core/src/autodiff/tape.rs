use super::{AutodiffError, Tensor};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulNt { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Exp { a: Var },
    Relu { a: Var },
    SubRowMax { a: Var, argmax: Vec<Option<usize>>, support: Option<Vec<bool>> },
    RowL1Normalize { a: Var, norms: Vec<T> },
    RowSoftmax { a: Var },
    LayerNorm { a: Var, inv_std: Vec<T> },
    Concat { a: Var, b: Var },
    SplitHeads { a: Var, heads: usize },
    MergeHeads { a: Var, heads: usize },
    SumNodes { a: Var, mask: Vec<bool> },
    MeanNodes { a: Var, mask: Vec<bool>, counts: Vec<usize> },
    MaxNodes { a: Var, argmax: Vec<usize> },
    SumAll { a: Var },
    CrossEntropy { a: Var, probs: Vec<T>, targets: Vec<usize> },
    Mae { a: Var, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Values are appended in evaluation order, which is already a
/// topological order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, left: [usize; 3], right: [usize; 3]) -> AutodiffError {
    AutodiffError::Shape { op, left, right }
}

// Broadcast strides of `b` against an output of shape `out`.
fn broadcast_strides(op: &'static str, out: [usize; 3], b: [usize; 3]) -> Result<[usize; 3], AutodiffError> {
    for d in 0..3 {
        if b[d] != out[d] && b[d] != 1 {
            return Err(shape_err(op, out, b));
        }
    }
    let full = [b[1] * b[2], b[2], 1];
    Ok([0, 1, 2].map(|d| if b[d] == 1 { 0 } else { full[d] }))
}

// out[n,m] += a[n,k] · b[k,m]
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let x = a[i * k + kk];
            if x == T::zero() {
                continue;
            }
            for (o, &y) in out_row.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                *o += x * y;
            }
        }
    }
}

// out[n,m] += a[n,k] · b[m,k]ᵀ
fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in ar.iter().zip(br) {
                s += x * y;
            }
            out[i * m + j] += s;
        }
    }
}

// out[k,m] += a[n,k]ᵀ · b[n,m]
fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for kk in 0..k {
            let x = a[i * k + kk];
            if x == T::zero() {
                continue;
            }
            for (o, &y) in out[kk * m..(kk + 1) * m].iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 3] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Batched `a·b`. `b` may have batch 1, in which case it is shared.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let [ba, n, k] = self.shape(a);
        let [bb, k2, m] = self.shape(b);
        if k != k2 || (bb != ba && bb != 1) {
            return Err(shape_err("matmul", [ba, n, k], [bb, k2, m]));
        }
        let mut out = Tensor::zeros([ba, n, m]);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let od = out.data_mut();
            for t in 0..ba {
                let tb = if bb == 1 { 0 } else { t };
                gemm_nn(&av[t * n * k..(t + 1) * n * k], &bv[tb * k * m..(tb + 1) * k * m], &mut od[t * n * m..(t + 1) * n * m], n, k, m);
            }
        }
        Ok(self.derived(out, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched `a·bᵀ` with matching batch sizes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let [ba, n, k] = self.shape(a);
        let [bb, m, k2] = self.shape(b);
        if k != k2 || ba != bb {
            return Err(shape_err("matmul_nt", [ba, n, k], [bb, m, k2]));
        }
        let mut out = Tensor::zeros([ba, n, m]);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let od = out.data_mut();
            for t in 0..ba {
                gemm_nt(&av[t * n * k..(t + 1) * n * k], &bv[t * m * k..(t + 1) * m * k], &mut od[t * n * m..(t + 1) * n * m], n, k, m);
            }
        }
        Ok(self.derived(out, Op::MatMulNt { a, b }, &[a, b]))
    }

    fn broadcast_binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, AutodiffError> {
        let sa = self.shape(a);
        let st = broadcast_strides(op, sa, self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b).data());
        let mut out = Tensor::zeros(sa);
        let od = out.data_mut();
        let mut idx = 0;
        for t in 0..sa[0] {
            for i in 0..sa[1] {
                let base = t * st[0] + i * st[1];
                for j in 0..sa[2] {
                    od[idx] = f(av.data()[idx], bv[base + j * st[2]]);
                    idx += 1;
                }
            }
        }
        Ok(out)
    }

    /// `a + b`; every axis of `b` must match `a` or be 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.derived(out, Op::Add { a, b }, &[a, b]))
    }

    /// Hadamard product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.derived(out, Op::Scale { a, s }, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.derived(out, Op::Exp { a }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.derived(out, Op::Relu { a }, &[a])
    }

    /// Subtracts from each row its maximum over the entries where `support`
    /// is positive; entries outside the support become `-inf` so that a
    /// following `exp` maps them to exactly 0. Without `support` every entry
    /// counts. Rows with empty support are all `-inf`. Used to stabilise `exp`
    /// before a row normalization, which makes the result shift invariant.
    pub fn sub_row_max(&mut self, a: Var, support: Option<&Tensor<T>>) -> Result<Var, AutodiffError> {
        let shape = self.shape(a);
        if let Some(s) = support {
            if s.shape() != shape {
                return Err(shape_err("sub_row_max", shape, s.shape()));
            }
        }
        let c = shape[2];
        let keep: Option<Vec<bool>> = support.map(|s| s.data().iter().map(|&x| x > T::zero()).collect());
        let mut out = self.value(a).clone();
        let mut argmax = Vec::with_capacity(shape[0] * shape[1]);
        for (r, row) in out.data_mut().chunks_mut(c.max(1)).enumerate() {
            let inside = |j: usize| keep.as_ref().is_none_or(|k| k[r * c + j]);
            let mut best: Option<usize> = None;
            for j in (0..c).filter(|&j| inside(j)) {
                if best.is_none_or(|b| row[j] > row[b]) {
                    best = Some(j);
                }
            }
            let m = best.map_or(T::zero(), |b| row[b]);
            for (j, x) in row.iter_mut().enumerate() {
                *x = if inside(j) { *x - m } else { T::neg_infinity() };
            }
            argmax.push(best);
        }
        Ok(self.derived(out, Op::SubRowMax { a, argmax, support: keep }, &[a]))
    }

    /// Divides each row by its ℓ1 norm. A row whose norm is below `1e-30`
    /// is an error that names the row.
    pub fn row_l1_normalize(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let [bs, r, c] = self.shape(a);
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(bs * r);
        let tiny = T::of(1e-30);
        for (idx, row) in out.data_mut().chunks_mut(c.max(1)).enumerate() {
            let s: T = row.iter().map(|x| x.abs()).sum();
            if !(s >= tiny) {
                return Err(AutodiffError::ZeroRow { batch: idx / r.max(1), row: idx % r.max(1) });
            }
            row.iter_mut().for_each(|x| *x /= s);
            norms.push(s);
        }
        Ok(self.derived(out, Op::RowL1Normalize { a, norms }, &[a]))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let c = self.shape(a)[2];
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.derived(out, Op::RowSoftmax { a }, &[a])
    }

    /// Normalizes each row to zero mean and unit variance (biased), without
    /// an affine transform.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let c = self.shape(a)[2];
        let cn = T::of(c as f64);
        let mut out = self.value(a).clone();
        let mut inv_std = Vec::new();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / cn;
            let is = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        self.derived(out, Op::LayerNorm { a, inv_std }, &[a])
    }

    /// Concatenation along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let [ba, n, ca] = self.shape(a);
        let [bb, nb, cb] = self.shape(b);
        if ba != bb || n != nb {
            return Err(shape_err("concat", [ba, n, ca], [bb, nb, cb]));
        }
        let mut data = Vec::with_capacity(ba * n * (ca + cb));
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for r in 0..ba * n {
            data.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        let out = Tensor::from_vec([ba, n, ca + cb], data);
        Ok(self.derived(out, Op::Concat { a, b }, &[a, b]))
    }

    /// `[B, N, H·d] → [B·H, N, d]`, head `h` of graph `b` at batch index `b·H + h`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var, AutodiffError> {
        let [bs, n, c] = self.shape(a);
        if heads == 0 || c % heads != 0 {
            return Err(AutodiffError::Heads { width: c, heads });
        }
        let d = c / heads;
        let av = self.value(a);
        let mut out = Tensor::zeros([bs * heads, n, d]);
        for t in 0..bs {
            for i in 0..n {
                for h in 0..heads {
                    for k in 0..d {
                        out.set(t * heads + h, i, k, av.get(t, i, h * d + k));
                    }
                }
            }
        }
        Ok(self.derived(out, Op::SplitHeads { a, heads }, &[a]))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, a: Var, heads: usize) -> Result<Var, AutodiffError> {
        let [bh, n, d] = self.shape(a);
        if heads == 0 || bh % heads != 0 {
            return Err(AutodiffError::Heads { width: bh, heads });
        }
        let bs = bh / heads;
        let av = self.value(a);
        let mut out = Tensor::zeros([bs, n, heads * d]);
        for t in 0..bs {
            for i in 0..n {
                for h in 0..heads {
                    for k in 0..d {
                        out.set(t, i, h * d + k, av.get(t * heads + h, i, k));
                    }
                }
            }
        }
        Ok(self.derived(out, Op::MergeHeads { a, heads }, &[a]))
    }

    fn check_mask(&self, op: &'static str, a: Var, mask: &[bool]) -> Result<[usize; 3], AutodiffError> {
        let s = self.shape(a);
        if mask.len() != s[0] * s[1] {
            return Err(AutodiffError::MaskLength { op, expected: s[0] * s[1], got: mask.len() });
        }
        Ok(s)
    }

    /// Sum over the node axis of the rows selected by `mask` (`[B, N]`, row-major).
    pub fn sum_nodes(&mut self, a: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let [bs, n, c] = self.check_mask("sum_nodes", a, mask)?;
        let av = self.value(a);
        let mut out = Tensor::zeros([bs, 1, c]);
        for t in 0..bs {
            for i in (0..n).filter(|&i| mask[t * n + i]) {
                for k in 0..c {
                    out.data_mut()[t * c + k] += av.get(t, i, k);
                }
            }
        }
        Ok(self.derived(out, Op::SumNodes { a, mask: mask.to_vec() }, &[a]))
    }

    /// Mean over the masked nodes; a graph with no masked node is an error.
    pub fn mean_nodes(&mut self, a: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let [bs, n, c] = self.check_mask("mean_nodes", a, mask)?;
        let counts: Vec<usize> = (0..bs).map(|t| mask[t * n..(t + 1) * n].iter().filter(|&&m| m).count()).collect();
        if let Some(t) = counts.iter().position(|&k| k == 0) {
            return Err(AutodiffError::EmptyPool { batch: t });
        }
        let av = self.value(a);
        let mut out = Tensor::zeros([bs, 1, c]);
        for t in 0..bs {
            let inv = T::one() / T::of(counts[t] as f64);
            for i in (0..n).filter(|&i| mask[t * n + i]) {
                for k in 0..c {
                    out.data_mut()[t * c + k] += av.get(t, i, k) * inv;
                }
            }
        }
        Ok(self.derived(out, Op::MeanNodes { a, mask: mask.to_vec(), counts }, &[a]))
    }

    /// Feature-wise maximum over the masked nodes. Ties go to the lowest node index.
    pub fn max_nodes(&mut self, a: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let [bs, n, c] = self.check_mask("max_nodes", a, mask)?;
        let av = self.value(a);
        let mut out = Tensor::zeros([bs, 1, c]);
        let mut argmax = Vec::with_capacity(bs * c);
        for t in 0..bs {
            for k in 0..c {
                let best = (0..n)
                    .filter(|&i| mask[t * n + i])
                    .reduce(|b, i| if av.get(t, i, k) > av.get(t, b, k) { i } else { b })
                    .ok_or(AutodiffError::EmptyPool { batch: t })?;
                out.data_mut()[t * c + k] = av.get(t, best, k);
                argmax.push(best);
            }
        }
        Ok(self.derived(out, Op::MaxNodes { a, argmax }, &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.derived(Tensor::scalar(s), Op::SumAll { a }, &[a])
    }

    /// Mean cross-entropy of logits `[B, 1, C]` against class indices.
    pub fn cross_entropy(&mut self, a: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let [bs, one, c] = self.shape(a);
        if one != 1 || targets.len() != bs {
            return Err(AutodiffError::Targets { op: "cross_entropy", shape: [bs, one, c], count: targets.len() });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(AutodiffError::ClassOutOfRange { class: t, classes: c });
        }
        let av = self.value(a).data();
        let mut probs = Vec::with_capacity(bs * c);
        let mut loss = T::zero();
        for (t, &y) in targets.iter().enumerate() {
            let row = &av[t * c..(t + 1) * c];
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().map(|&x| (x - m).exp()).sum::<T>().ln() + m;
            loss += lse - row[y];
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let loss = loss / T::of(bs as f64);
        Ok(self.derived(Tensor::scalar(loss), Op::CrossEntropy { a, probs, targets: targets.to_vec() }, &[a]))
    }

    /// Mean absolute error of predictions `[B, 1, 1]`.
    pub fn mae(&mut self, a: Var, targets: &[T]) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if s[1] != 1 || s[2] != 1 || targets.len() != s[0] {
            return Err(AutodiffError::Targets { op: "mae", shape: s, count: targets.len() });
        }
        let av = self.value(a).data();
        let loss = av.iter().zip(targets).map(|(&p, &y)| (p - y).abs()).sum::<T>() / T::of(s[0] as f64);
        Ok(self.derived(Tensor::scalar(loss), Op::Mae { a, targets: targets.to_vec() }, &[a]))
    }

    /// Reverse pass from a scalar `loss`. Gradients are returned for every
    /// value that depends on a [`Tape::param`] leaf, and accumulate across
    /// fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let shape = self.shape(loss);
        if shape != [1, 1, 1] {
            return Err(AutodiffError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    // Sum `g` (output-shaped) down to the broadcast shape of `b`.
    fn reduce_to(&self, g: &[T], out: [usize; 3], b: [usize; 3]) -> Tensor<T> {
        let st = broadcast_strides("reduce", out, b).expect("validated in forward");
        let mut r = Tensor::zeros(b);
        let rd = r.data_mut();
        let mut idx = 0;
        for t in 0..out[0] {
            for i in 0..out[1] {
                let base = t * st[0] + i * st[1];
                for j in 0..out[2] {
                    rd[base + j * st[2]] += g[idx];
                    idx += 1;
                }
            }
        }
        r
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let [ba, n, k] = av.shape();
                let [bb, _, m] = bv.shape();
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    for t in 0..ba {
                        let tb = if bb == 1 { 0 } else { t };
                        gemm_nt(
                            &gd[t * n * m..(t + 1) * n * m],
                            &bv.data()[tb * k * m..(tb + 1) * k * m],
                            &mut ga.data_mut()[t * n * k..(t + 1) * n * k],
                            n,
                            m,
                            k,
                        );
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    for t in 0..ba {
                        let tb = if bb == 1 { 0 } else { t };
                        gemm_tn(
                            &av.data()[t * n * k..(t + 1) * n * k],
                            &gd[t * n * m..(t + 1) * n * m],
                            &mut gb.data_mut()[tb * k * m..(tb + 1) * k * m],
                            n,
                            k,
                            m,
                        );
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulNt { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let [bs, n, k] = av.shape();
                let m = bv.shape()[1];
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    for t in 0..bs {
                        gemm_nn(
                            &gd[t * n * m..(t + 1) * n * m],
                            &bv.data()[t * m * k..(t + 1) * m * k],
                            &mut ga.data_mut()[t * n * k..(t + 1) * n * k],
                            n,
                            m,
                            k,
                        );
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    for t in 0..bs {
                        gemm_tn(
                            &gd[t * n * m..(t + 1) * n * m],
                            &av.data()[t * n * k..(t + 1) * n * k],
                            &mut gb.data_mut()[t * m * k..(t + 1) * m * k],
                            n,
                            m,
                            k,
                        );
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let gb = self.reduce_to(gd, out.shape(), self.shape(*b));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let st = broadcast_strides("mul", sa, sb).expect("validated in forward");
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = Tensor::zeros(sa);
                let mut gab = vec![T::zero(); gd.len()];
                let mut idx = 0;
                for t in 0..sa[0] {
                    for i in 0..sa[1] {
                        let base = t * st[0] + i * st[1];
                        for j in 0..sa[2] {
                            ga.data_mut()[idx] = gd[idx] * bv[base + j * st[2]];
                            gab[idx] = gd[idx] * av[idx];
                            idx += 1;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
                if self.requires_grad(*b) {
                    let gb = self.reduce_to(&gab, sa, sb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale { a, s } => self.accumulate(grads, *a, g.map(|x| x * *s)),
            Op::Exp { a } => {
                let mut ga = g.clone();
                ga.data_mut().iter_mut().zip(out.data()).for_each(|(x, &y)| *x *= y);
                self.accumulate(grads, *a, ga);
            }
            Op::Relu { a } => {
                let mut ga = g.clone();
                ga.data_mut().iter_mut().zip(self.value(*a).data()).for_each(|(x, &y)| {
                    if y <= T::zero() {
                        *x = T::zero();
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::SubRowMax { a, argmax, support } => {
                let c = out.shape()[2];
                let mut ga = g.clone();
                if let Some(k) = support {
                    ga.data_mut().iter_mut().zip(k).for_each(|(x, &keep)| {
                        if !keep {
                            *x = T::zero();
                        }
                    });
                }
                for (r, best) in argmax.iter().enumerate() {
                    if let Some(b) = *best {
                        let row = &mut ga.data_mut()[r * c..(r + 1) * c];
                        let s: T = row.iter().copied().sum();
                        row[b] -= s;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowL1Normalize { a, norms } => {
                // y = x / s, s = Σ|x|: dx_j = (g_j - sign(x_j)·Σ g·y) / s
                let c = out.shape()[2];
                let av = self.value(*a).data();
                let mut ga = Tensor::zeros(out.shape());
                for (r, &s) in norms.iter().enumerate() {
                    let rg = &gd[r * c..(r + 1) * c];
                    let ry = &out.data()[r * c..(r + 1) * c];
                    let dot: T = rg.iter().zip(ry).map(|(&x, &y)| x * y).sum();
                    for j in 0..c {
                        let x = av[r * c + j];
                        let sign = if x > T::zero() {
                            T::one()
                        } else if x < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        ga.data_mut()[r * c + j] = (rg[j] - sign * dot) / s;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowSoftmax { a } => {
                let c = out.shape()[2];
                let mut ga = Tensor::zeros(out.shape());
                for (r, row) in ga.data_mut().chunks_mut(c.max(1)).enumerate() {
                    let rg = &gd[r * c..(r + 1) * c];
                    let ry = &out.data()[r * c..(r + 1) * c];
                    let dot: T = rg.iter().zip(ry).map(|(&x, &y)| x * y).sum();
                    for j in 0..c {
                        row[j] = ry[j] * (rg[j] - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNorm { a, inv_std } => {
                // dx = inv_std · (g - mean(g) - y·mean(g·y))
                let c = out.shape()[2];
                let cn = T::of(c as f64);
                let mut ga = Tensor::zeros(out.shape());
                for (r, row) in ga.data_mut().chunks_mut(c.max(1)).enumerate() {
                    let rg = &gd[r * c..(r + 1) * c];
                    let ry = &out.data()[r * c..(r + 1) * c];
                    let mg = rg.iter().copied().sum::<T>() / cn;
                    let mgy = rg.iter().zip(ry).map(|(&x, &y)| x * y).sum::<T>() / cn;
                    for j in 0..c {
                        row[j] = inv_std[r] * (rg[j] - mg - ry[j] * mgy);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Concat { a, b } => {
                let [bs, n, ca] = self.shape(*a);
                let cb = self.shape(*b)[2];
                let c = ca + cb;
                let mut da = Vec::with_capacity(bs * n * ca);
                let mut db = Vec::with_capacity(bs * n * cb);
                for r in 0..bs * n {
                    da.extend_from_slice(&gd[r * c..r * c + ca]);
                    db.extend_from_slice(&gd[r * c + ca..(r + 1) * c]);
                }
                self.accumulate(grads, *a, Tensor::from_vec([bs, n, ca], da));
                self.accumulate(grads, *b, Tensor::from_vec([bs, n, cb], db));
            }
            Op::SplitHeads { a, heads } => {
                let [bs, n, c] = self.shape(*a);
                let d = c / heads;
                let mut ga = Tensor::zeros([bs, n, c]);
                for t in 0..bs {
                    for i in 0..n {
                        for h in 0..*heads {
                            for k in 0..d {
                                ga.set(t, i, h * d + k, g.get(t * heads + h, i, k));
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MergeHeads { a, heads } => {
                let [bh, n, d] = self.shape(*a);
                let mut ga = Tensor::zeros([bh, n, d]);
                for t in 0..bh / heads {
                    for i in 0..n {
                        for h in 0..*heads {
                            for k in 0..d {
                                ga.set(t * heads + h, i, k, g.get(t, i, h * d + k));
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumNodes { a, mask } => {
                let [bs, n, c] = self.shape(*a);
                let mut ga = Tensor::zeros([bs, n, c]);
                for t in 0..bs {
                    for i in (0..n).filter(|&i| mask[t * n + i]) {
                        for k in 0..c {
                            ga.set(t, i, k, gd[t * c + k]);
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MeanNodes { a, mask, counts } => {
                let [bs, n, c] = self.shape(*a);
                let mut ga = Tensor::zeros([bs, n, c]);
                for t in 0..bs {
                    let inv = T::one() / T::of(counts[t] as f64);
                    for i in (0..n).filter(|&i| mask[t * n + i]) {
                        for k in 0..c {
                            ga.set(t, i, k, gd[t * c + k] * inv);
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MaxNodes { a, argmax } => {
                let [bs, n, c] = self.shape(*a);
                let mut ga = Tensor::zeros([bs, n, c]);
                for t in 0..bs {
                    for k in 0..c {
                        ga.set(t, argmax[t * c + k], k, gd[t * c + k]);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumAll { a } => {
                let s = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(s, gd[0]));
            }
            Op::CrossEntropy { a, probs, targets } => {
                let s = self.shape(*a);
                let c = s[2];
                let w = gd[0] / T::of(targets.len() as f64);
                let mut ga = Tensor::from_vec(s, probs.iter().map(|&p| p * w).collect());
                for (t, &y) in targets.iter().enumerate() {
                    ga.data_mut()[t * c + y] -= w;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Mae { a, targets } => {
                let av = self.value(*a);
                let w = gd[0] / T::of(targets.len() as f64);
                let data = av
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        let d = p - y;
                        if d > T::zero() {
                            w
                        } else if d < T::zero() {
                            -w
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(av.shape(), data));
            }
        }
    }
}
