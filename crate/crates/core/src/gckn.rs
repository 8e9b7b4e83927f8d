//! Path-substructure node features.
//!
//! Every node `u` is described by the sum, over all simple paths of at most
//! `k_max` nodes starting at `u`, of a Nyström feature map of the path's
//! label sequence:
//!
//! ```text
//! X(u) = Σ_{p ∈ P_k(u)} ψ(p),   ψ(x) = (κ(ZZᵀ) + εI)^{-1/2} κ(Z, x)
//! κ(a, b) = exp((a·b - 1) / σ²)
//! ```
//!
//! Path features are one-hot label blocks, one per path position, padded to
//! `k_max` blocks and ℓ2-normalized, so κ is the Gaussian kernel on the unit
//! sphere. Anchors `Z` are fitted without supervision by spherical k-means.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::spectral::{symmetric_eig, SpectralError};
use crate::{DenseMatrix, Scalar};

/// Ridge added to the anchor Gram matrix before inversion.
pub const NYSTROM_RIDGE: f64 = 1e-6;
/// Spherical k-means iteration cap.
pub const KMEANS_MAX_ITERS: usize = 100;
/// Upper bound on the number of paths sampled for anchor fitting.
pub const MAX_FIT_SAMPLES: usize = 100_000;

pub const DEFAULT_FILTERS: usize = 32;
pub const DEFAULT_SIGMA: f64 = 0.6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GcknError {
    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("k_max must be at least 1")]
    ZeroPathSize,
    #[error("node label {label} outside vocabulary of size {vocab}")]
    LabelOutOfVocab { label: usize, vocab: usize },
    #[error("path is not a simple path of the graph: {0:?}")]
    InvalidPath(Vec<usize>),
    #[error("path has {len} nodes, more than k_max = {k_max}")]
    PathTooLong { len: usize, k_max: usize },
    #[error("no samples to fit anchors on")]
    EmptySamples,
    #[error("number of anchors must be at least 1")]
    ZeroAnchors,
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("sample {index} has dimension {got}, expected {expected}")]
    SampleDimension { index: usize, got: usize, expected: usize },
    #[error("embedding expects k_max={k_max}, vocab={vocab}; got k_max={got_k_max}, vocab={got_vocab}")]
    DimensionMismatch { k_max: usize, vocab: usize, got_k_max: usize, got_vocab: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// All simple paths of at most `k_max` nodes starting at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub origin: usize,
    pub paths: Vec<Vec<usize>>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Depth-first enumeration, visiting neighbors in ascending order. Paths are
/// emitted in preorder, so every prefix precedes its extensions.
pub fn enumerate_paths(g: &Graph, u: usize, k_max: usize) -> Result<PathSet, GcknError> {
    if u >= g.n() {
        return Err(GcknError::NodeOutOfRange { node: u, n: g.n() });
    }
    if k_max == 0 {
        return Err(GcknError::ZeroPathSize);
    }
    let mut paths = Vec::new();
    let mut on_path = vec![false; g.n()];
    let mut current = vec![u];
    on_path[u] = true;
    dfs_collect(g, k_max, &mut current, &mut on_path, &mut paths);
    Ok(PathSet { origin: u, paths })
}

fn dfs_collect(g: &Graph, k_max: usize, current: &mut Vec<usize>, on_path: &mut [bool], out: &mut Vec<Vec<usize>>) {
    out.push(current.clone());
    if current.len() == k_max {
        return;
    }
    let last = *current.last().expect("non-empty path");
    for &v in g.neighbors(last) {
        if on_path[v] {
            continue;
        }
        on_path[v] = true;
        current.push(v);
        dfs_collect(g, k_max, current, on_path, out);
        current.pop();
        on_path[v] = false;
    }
}

/// Number of simple paths of at most `k_max` nodes starting at `u`, without
/// materializing them.
pub fn count_paths(g: &Graph, u: usize, k_max: usize) -> Result<usize, GcknError> {
    let mut count = 0usize;
    visit_paths(g, u, k_max, |_| count += 1)?;
    Ok(count)
}

/// Calls `visit` with every path (as a node slice) in enumeration order.
pub fn visit_paths(g: &Graph, u: usize, k_max: usize, mut visit: impl FnMut(&[usize])) -> Result<(), GcknError> {
    if u >= g.n() {
        return Err(GcknError::NodeOutOfRange { node: u, n: g.n() });
    }
    if k_max == 0 {
        return Err(GcknError::ZeroPathSize);
    }
    fn go(g: &Graph, k_max: usize, cur: &mut Vec<usize>, on: &mut [bool], visit: &mut impl FnMut(&[usize])) {
        visit(cur);
        if cur.len() == k_max {
            return;
        }
        let last = *cur.last().expect("non-empty path");
        for &v in g.neighbors(last) {
            if !on[v] {
                on[v] = true;
                cur.push(v);
                go(g, k_max, cur, on, visit);
                cur.pop();
                on[v] = false;
            }
        }
    }
    let mut on = vec![false; g.n()];
    on[u] = true;
    let mut cur = vec![u];
    go(g, k_max, &mut cur, &mut on, &mut visit);
    Ok(())
}

/// One-hot label blocks along `path`, zero-padded to `k_max` blocks of size
/// `vocab`, then ℓ2-normalized.
pub fn path_features<T: Scalar>(g: &Graph, path: &[usize], vocab: usize, k_max: usize) -> Result<Vec<T>, GcknError> {
    if path.len() > k_max {
        return Err(GcknError::PathTooLong { len: path.len(), k_max });
    }
    let valid = path.iter().all(|&v| v < g.n()) && path.windows(2).all(|w| g.has_edge(w[0], w[1])) && {
        let mut seen = path.to_vec();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    };
    if !valid {
        return Err(GcknError::InvalidPath(path.to_vec()));
    }
    let mut x = vec![T::zero(); vocab * k_max];
    for (slot, &v) in path.iter().enumerate() {
        let label = g.node_labels()[v];
        if label >= vocab {
            return Err(GcknError::LabelOutOfVocab { label, vocab });
        }
        x[slot * vocab + label] = T::one();
    }
    if !path.is_empty() {
        let inv = T::one() / T::of(path.len() as f64).sqrt();
        x.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(x)
}

/// Fitted Nyström feature map for path features.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromEmbedding<T> {
    /// `m × q`, rows ℓ2-normalized.
    pub anchors: DenseMatrix<T>,
    pub sigma: f64,
    pub ridge: f64,
    /// `(κ(ZZᵀ) + εI)^{-1/2}`.
    pub normalizer: DenseMatrix<T>,
    pub k_max: usize,
    pub vocab: usize,
}

impl<T: Scalar> NystromEmbedding<T> {
    pub fn num_anchors(&self) -> usize {
        self.anchors.rows()
    }

    /// Builds the embedding from given anchors (rows are re-normalized).
    pub fn from_anchors(anchors: DenseMatrix<T>, sigma: f64, k_max: usize, vocab: usize) -> Result<Self, GcknError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(GcknError::BadBandwidth(sigma));
        }
        let mut anchors = anchors;
        for i in 0..anchors.rows() {
            normalize(anchors.row_mut(i));
        }
        let gram = anchor_gram(&anchors, sigma);
        let ridge = T::of(NYSTROM_RIDGE);
        let shifted = DenseMatrix::from_fn(gram.rows(), gram.cols(), |i, j| gram[(i, j)] + if i == j { ridge } else { T::zero() });
        let floor = ridge * T::of(1e-3);
        let normalizer = symmetric_eig(&shifted)?.apply(|l| T::one() / l.max(floor).sqrt())?;
        Ok(Self { anchors, sigma, ridge: NYSTROM_RIDGE, normalizer, k_max, vocab })
    }

    /// `κ(Z, x)`: kernel values of `x` against every anchor.
    pub fn kernel_vector(&self, x: &[T]) -> Vec<T> {
        let inv_s2 = T::of(1.0 / (self.sigma * self.sigma));
        (0..self.num_anchors())
            .map(|a| {
                let dot: T = self.anchors.row(a).iter().zip(x).map(|(&z, &v)| z * v).sum();
                ((dot - T::one()) * inv_s2).exp()
            })
            .collect()
    }

    /// `ψ(x)`.
    pub fn embed(&self, x: &[T]) -> Vec<T> {
        self.normalizer.matvec(&self.kernel_vector(x)).expect("normalizer is m×m")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NystromFile::from(self)).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let f: NystromFile = serde_json::from_str(s)?;
        let to_mat = |rows: &[Vec<f64>]| -> Result<DenseMatrix<T>, serde_json::Error> {
            DenseMatrix::from_rows(rows).map_err(serde::de::Error::custom)
        };
        Ok(Self {
            anchors: to_mat(&f.anchors)?,
            sigma: f.sigma,
            ridge: f.ridge,
            normalizer: to_mat(&f.normalizer)?,
            k_max: f.k_max,
            vocab: f.vocab,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NystromFile {
    format: String,
    k_max: usize,
    vocab: usize,
    sigma: f64,
    ridge: f64,
    anchors: Vec<Vec<f64>>,
    normalizer: Vec<Vec<f64>>,
}

impl<T: Scalar> From<&NystromEmbedding<T>> for NystromFile {
    fn from(e: &NystromEmbedding<T>) -> Self {
        let rows = |m: &DenseMatrix<T>| (0..m.rows()).map(|i| m.row(i).iter().map(|x| x.as_f64()).collect()).collect();
        Self {
            format: "graphit-nystrom-v1".into(),
            k_max: e.k_max,
            vocab: e.vocab,
            sigma: e.sigma,
            ridge: e.ridge,
            anchors: rows(&e.anchors),
            normalizer: rows(&e.normalizer),
        }
    }
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > T::zero() {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn anchor_gram<T: Scalar>(z: &DenseMatrix<T>, sigma: f64) -> DenseMatrix<T> {
    let inv_s2 = T::of(1.0 / (sigma * sigma));
    DenseMatrix::from_fn(z.rows(), z.rows(), |i, j| {
        let dot: T = z.row(i).iter().zip(z.row(j)).map(|(&a, &b)| a * b).sum();
        ((dot - T::one()) * inv_s2).exp()
    })
}

/// Spherical k-means anchors (cosine similarity, at most
/// [`KMEANS_MAX_ITERS`] iterations) initialized from `m` seeded samples,
/// distinct where possible, then the Nyström normalizer.
pub fn fit_unsupervised<T: Scalar>(
    samples: &[Vec<T>],
    m: usize,
    sigma: f64,
    k_max: usize,
    vocab: usize,
    seed: u64,
) -> Result<NystromEmbedding<T>, GcknError> {
    if samples.is_empty() {
        return Err(GcknError::EmptySamples);
    }
    if m == 0 {
        return Err(GcknError::ZeroAnchors);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(GcknError::BadBandwidth(sigma));
    }
    let q = k_max * vocab;
    for (index, s) in samples.iter().enumerate() {
        if s.len() != q {
            return Err(GcknError::SampleDimension { index, got: s.len(), expected: q });
        }
    }
    let data: Vec<Vec<T>> = samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            normalize(&mut s);
            s
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut init: Vec<usize> = Vec::with_capacity(m);
    for &i in &order {
        if init.len() == m {
            break;
        }
        if !init.iter().any(|&j| data[j] == data[i]) {
            init.push(i);
        }
    }
    // fewer distinct samples than anchors: cycle through the distinct ones
    let distinct = init.len();
    for k in distinct..m {
        init.push(init[k % distinct]);
    }
    let mut centroids: Vec<Vec<T>> = init.iter().map(|&i| data[i].clone()).collect();

    let mut assign = vec![usize::MAX; data.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, x) in data.iter().enumerate() {
            let best = nearest(&centroids, x);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![T::zero(); q]; m];
        let mut counts = vec![0usize; m];
        for (x, &a) in data.iter().zip(&assign) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (c, (mut s, count)) in centroids.iter_mut().zip(sums.into_iter().zip(counts)) {
            if count == 0 {
                continue;
            }
            normalize(&mut s);
            if s.iter().any(|&v| v != T::zero()) {
                *c = s;
            }
        }
    }
    let anchors = DenseMatrix::from_vec(m, q, centroids.concat()).expect("m×q anchors");
    NystromEmbedding::from_anchors(anchors, sigma, k_max, vocab)
}

fn nearest<T: Scalar>(centroids: &[Vec<T>], x: &[T]) -> usize {
    let mut best = 0;
    let mut best_sim = T::neg_infinity();
    for (c, z) in centroids.iter().enumerate() {
        let sim: T = z.iter().zip(x).map(|(&a, &b)| a * b).sum();
        if sim > best_sim {
            best_sim = sim;
            best = c;
        }
    }
    best
}

/// Features of paths sampled uniformly (reservoir sampling) from the given
/// graphs, at most `max_samples` of them.
pub fn sample_path_features<'a, T: Scalar>(
    graphs: impl IntoIterator<Item = &'a Graph>,
    k_max: usize,
    vocab: usize,
    max_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>, GcknError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<Vec<T>> = Vec::new();
    let mut seen = 0usize;
    for g in graphs {
        for u in 0..g.n() {
            let mut err = None;
            visit_paths(g, u, k_max, |p| {
                if err.is_some() {
                    return;
                }
                seen += 1;
                let slot = if reservoir.len() < max_samples {
                    Some(reservoir.len())
                } else {
                    let j = rng.gen_range(0..seen);
                    (j < max_samples).then_some(j)
                };
                if let Some(slot) = slot {
                    match path_features(g, p, vocab, k_max) {
                        Ok(f) if slot == reservoir.len() => reservoir.push(f),
                        Ok(f) => reservoir[slot] = f,
                        Err(e) => err = Some(e),
                    }
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    Ok(reservoir)
}

/// Per-node features `X(u) = Σ_p ψ(p)`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEmbedding<T> {
    pub values: DenseMatrix<T>,
}

/// Embeds every node of `g`. The anchor dot products are accumulated along
/// the depth-first search, so each path costs `O(m)` instead of `O(m·q)`.
pub fn embed_nodes<T: Scalar>(g: &Graph, emb: &NystromEmbedding<T>, k_max: usize) -> Result<PathEmbedding<T>, GcknError> {
    let vocab = emb.vocab;
    if k_max != emb.k_max {
        return Err(GcknError::DimensionMismatch { k_max: emb.k_max, vocab, got_k_max: k_max, got_vocab: vocab });
    }
    if let Some(&label) = g.node_labels().iter().find(|&&l| l >= vocab) {
        return Err(GcknError::LabelOutOfVocab { label, vocab });
    }
    let m = emb.num_anchors();
    let inv_s2 = T::of(1.0 / (emb.sigma * emb.sigma));
    let inv_sqrt: Vec<T> = (0..=k_max).map(|l| if l == 0 { T::zero() } else { T::one() / T::of(l as f64).sqrt() }).collect();
    let labels = g.node_labels();
    let anchor_entry = |a: usize, slot: usize, node: usize| emb.anchors[(a, slot * vocab + labels[node])];

    let mut values = DenseMatrix::zeros(g.n(), m);
    for u in 0..g.n() {
        let mut acc = vec![T::zero(); m];
        // prefix sums of anchor entries along the current path
        let mut prefix: Vec<Vec<T>> = vec![(0..m).map(|a| anchor_entry(a, 0, u)).collect()];
        let mut on = vec![false; g.n()];
        on[u] = true;
        let mut path = vec![u];
        let mut stack: Vec<usize> = vec![0];
        let add_path = |acc: &mut [T], dots: &[T], len: usize| {
            for (s, &d) in acc.iter_mut().zip(dots) {
                *s += ((d * inv_sqrt[len] - T::one()) * inv_s2).exp();
            }
        };
        add_path(&mut acc, &prefix[0], 1);
        // iterative DFS: stack[i] is the next neighbor index to try at depth i
        while let Some(&next) = stack.last() {
            let depth = stack.len() - 1;
            let last = path[depth];
            let nb = g.neighbors(last);
            if path.len() == k_max || next >= nb.len() {
                stack.pop();
                if depth > 0 {
                    on[path.pop().expect("path")] = false;
                    prefix.pop();
                }
                continue;
            }
            *stack.last_mut().expect("stack") += 1;
            let v = nb[next];
            if on[v] {
                continue;
            }
            on[v] = true;
            let slot = path.len();
            path.push(v);
            let dots: Vec<T> = prefix[depth].iter().enumerate().map(|(a, &d)| d + anchor_entry(a, slot, v)).collect();
            add_path(&mut acc, &dots, path.len());
            prefix.push(dots);
            stack.push(0);
        }
        let row = emb.normalizer.matvec(&acc).expect("m×m normalizer");
        values.row_mut(u).copy_from_slice(&row);
    }
    Ok(PathEmbedding { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::named::*;

    #[test]
    fn enumerate_examples() {
        let ps = enumerate_paths(&complete(3), 0, 3).unwrap();
        assert_eq!(ps.paths, vec![vec![0], vec![0, 1], vec![0, 1, 2], vec![0, 2], vec![0, 2, 1]]);
        assert_eq!(enumerate_paths(&single(), 0, 5).unwrap().paths, vec![vec![0]]);
        assert_eq!(enumerate_paths(&path(2), 0, 2).unwrap().paths, vec![vec![0], vec![0, 1]]);
        assert_eq!(enumerate_paths(&path(2), 2, 2), Err(GcknError::NodeOutOfRange { node: 2, n: 2 }));
        assert_eq!(count_paths(&complete(4), 1, 4).unwrap(), 1 + 3 + 6 + 6);
    }

    #[test]
    fn path_feature_examples() {
        let g = Graph::new(1, [], vec![2]).unwrap();
        assert_eq!(path_features::<f64>(&g, &[0], 3, 1).unwrap(), vec![0.0, 0.0, 1.0]);

        let g = Graph::new(2, [(0, 1)], vec![0, 1]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let f = path_features::<f64>(&g, &[0, 1], 2, 2).unwrap();
        for (a, b) in f.iter().zip([h, 0.0, 0.0, h]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(path_features::<f64>(&g, &[0], 2, 2).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);

        assert_eq!(path_features::<f64>(&g, &[1], 1, 1), Err(GcknError::LabelOutOfVocab { label: 1, vocab: 1 }));
        let p3 = path(3);
        assert!(matches!(path_features::<f64>(&p3, &[0, 2], 1, 2), Err(GcknError::InvalidPath(_))));
        assert!(matches!(path_features::<f64>(&p3, &[0, 1, 0], 1, 3), Err(GcknError::InvalidPath(_))));
    }

    #[test]
    fn fit_recovers_orthonormal_samples() {
        let samples: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let emb = fit_unsupervised(&samples, 4, 0.6, 2, 2, 7).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..4).map(|i| emb.anchors.row(i).to_vec()).collect();
        rows.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(rows, samples);
    }

    #[test]
    fn fit_single_repeated_sample() {
        let s = vec![0.0, 1.0, 0.0, 0.0];
        let emb = fit_unsupervised(&vec![s.clone(); 5], 1, 0.6, 2, 2, 0).unwrap();
        assert_eq!(emb.anchors.row(0), s.as_slice());
        let expect = 1.0 / (1.0 + NYSTROM_RIDGE).sqrt();
        assert!((emb.normalizer[(0, 0)] - expect).abs() < 1e-12);
    }

    #[test]
    fn wide_bandwidth_flattens_kernel() {
        let samples = vec![vec![1.0f64, 0.0], vec![0.0, 1.0]];
        let emb = fit_unsupervised(&samples, 2, 1e6, 1, 2, 0).unwrap();
        for k in emb.kernel_vector(&[1.0, 0.0]) {
            assert!((k - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_unsupervised::<f64>(&[], 1, 0.5, 1, 1, 0), Err(GcknError::EmptySamples));
        assert_eq!(fit_unsupervised(&[vec![1.0]], 1, 0.0, 1, 1, 0), Err(GcknError::BadBandwidth(0.0)));
        assert_eq!(fit_unsupervised(&[vec![1.0]], 0, 0.5, 1, 1, 0), Err(GcknError::ZeroAnchors));
        assert!(matches!(fit_unsupervised(&[vec![1.0, 0.0]], 1, 0.5, 1, 1, 0), Err(GcknError::SampleDimension { .. })));
    }

    #[test]
    fn single_node_embedding() {
        let g = Graph::new(1, [], vec![0]).unwrap();
        let f = path_features::<f64>(&g, &[0], 1, 1).unwrap();
        let emb = fit_unsupervised(&[f], 1, 0.6, 1, 1, 0).unwrap();
        let x = embed_nodes(&g, &emb, 1).unwrap();
        assert!((x.values[(0, 0)] - 1.0 / (1.0 + NYSTROM_RIDGE).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_graph_gives_identical_rows() {
        let g = complete(3);
        let samples = sample_path_features::<f64>([&g], 3, 1, 100, 0).unwrap();
        let emb = fit_unsupervised(&samples, 2, 0.6, 3, 1, 0).unwrap();
        let x = embed_nodes(&g, &emb, 3).unwrap();
        for u in 1..3 {
            for a in 0..2 {
                assert!((x.values[(u, a)] - x.values[(0, a)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_embedding_matches_naive_sum() {
        let g = Graph::new(6, [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (4, 5), (1, 4)], vec![0, 1, 2, 0, 1, 2]).unwrap();
        let k_max = 4;
        let samples = sample_path_features::<f64>([&g], k_max, 3, 1000, 3).unwrap();
        let emb = fit_unsupervised(&samples, 5, 0.6, k_max, 3, 11).unwrap();
        let fast = embed_nodes(&g, &emb, k_max).unwrap();
        for u in 0..g.n() {
            let mut naive = [0.0f64; 5];
            for p in enumerate_paths(&g, u, k_max).unwrap().paths {
                let f = path_features(&g, &p, 3, k_max).unwrap();
                for (s, v) in naive.iter_mut().zip(emb.embed(&f)) {
                    *s += v;
                }
            }
            for a in 0..5 {
                assert!((fast.values[(u, a)] - naive[a]).abs() < 1e-10, "node {u} anchor {a}");
            }
        }
    }

    #[test]
    fn embedding_dimension_checks() {
        let g = Graph::new(2, [(0, 1)], vec![0, 3]).unwrap();
        let emb = fit_unsupervised(&[vec![1.0, 0.0]], 1, 0.6, 1, 2, 0).unwrap();
        assert!(matches!(embed_nodes(&g, &emb, 2), Err(GcknError::DimensionMismatch { .. })));
        assert_eq!(embed_nodes(&g, &emb, 1), Err(GcknError::LabelOutOfVocab { label: 3, vocab: 2 }));
    }

    #[test]
    fn json_round_trip() {
        let samples = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.6, 0.8, 0.0]];
        let emb = fit_unsupervised(&samples, 2, 0.6, 2, 2, 1).unwrap();
        let back = NystromEmbedding::<f64>::from_json(&emb.to_json()).unwrap();
        assert_eq!(back, emb);
    }
}
