//! Undirected, unweighted graphs with discrete node labels and the basic
//! matrices built from them.
//!
//! Isolated nodes (degree 0) take the convention `D^{-1/2}[i] = 0`: their rows
//! and columns in `D^{-1/2} A D^{-1/2}` vanish and their diagonal entry in the
//! normalized Laplacian is 0, so each isolated node contributes one zero
//! eigenvalue.

use crate::{DenseMatrix, Scalar};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({0}, {1}) has an endpoint outside [0, {2})")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("expected {expected} node labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("not a permutation of [0, {0})")]
    NotAPermutation(usize),
    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
}

/// Graph-level target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Regression(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    /// Unordered pairs stored once as `(min, max)`, sorted.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    node_labels: Vec<usize>,
    target: Option<Target>,
}

impl Graph {
    /// Builds a graph; duplicate and reversed edges are merged.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, node_labels: Vec<usize>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if node_labels.len() != n {
            return Err(GraphError::LabelCount { expected: n, got: node_labels.len() });
        }
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::EdgeOutOfRange(u, v, n));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &canon {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self { n, edges: canon, neighbors, node_labels, target: None })
    }

    /// Unlabeled graph (every node label 0).
    pub fn unlabeled(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        Self::new(n, edges, vec![0; n])
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = Some(target);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `u` in ascending order.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.node_labels
    }

    pub fn target(&self) -> Option<Target> {
        self.target
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn degree_vector(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_isolated_nodes(&self) -> bool {
        self.neighbors.iter().any(Vec::is_empty)
    }

    pub fn adjacency<T: Scalar>(&self) -> DenseMatrix<T> {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a[(u, v)] = T::one();
            a[(v, u)] = T::one();
        }
        a
    }

    /// `D^{-1/2}` diagonal with the degree-0 convention (entry 0).
    pub fn inv_sqrt_degrees<T: Scalar>(&self) -> Vec<T> {
        self.degree_vector().into_iter().map(|d| if d == 0 { T::zero() } else { T::one() / T::of(d as f64).sqrt() }).collect()
    }

    /// `D^{-1/2} A D^{-1/2}`.
    pub fn normalized_adjacency<T: Scalar>(&self) -> DenseMatrix<T> {
        let s = self.inv_sqrt_degrees::<T>();
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            let w = s[u] * s[v];
            a[(u, v)] = w;
            a[(v, u)] = w;
        }
        a
    }

    /// `I - D^{-1/2} A D^{-1/2}`, with diagonal 0 for isolated nodes.
    pub fn normalized_laplacian<T: Scalar>(&self) -> DenseMatrix<T> {
        let mut l = self.normalized_adjacency::<T>().map(|x| -x);
        for (i, nb) in self.neighbors.iter().enumerate() {
            l[(i, i)] = if nb.is_empty() { T::zero() } else { T::one() };
        }
        l
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, GraphError> {
        if !is_permutation(perm, self.n) {
            return Err(GraphError::NotAPermutation(self.n));
        }
        let mut labels = vec![0; self.n];
        for (i, &p) in perm.iter().enumerate() {
            labels[p] = self.node_labels[i];
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        let mut g = Self::new(self.n, edges, labels)?;
        g.target = self.target;
        Ok(g)
    }

    /// Breadth-first hop distances from `source`; `None` when unreachable.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(Option::is_some)
    }
}

pub(crate) fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Small named graphs used throughout the tests and docs.
pub mod named {
    use super::Graph;

    pub fn path(n: usize) -> Graph {
        Graph::unlabeled(n, (1..n).map(|i| (i - 1, i))).expect("valid path graph")
    }

    pub fn complete(n: usize) -> Graph {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
        Graph::unlabeled(n, edges).expect("valid complete graph")
    }

    pub fn cycle(n: usize) -> Graph {
        assert!(n >= 3);
        Graph::unlabeled(n, (0..n).map(|i| (i, (i + 1) % n))).expect("valid cycle graph")
    }

    pub fn single() -> Graph {
        Graph::unlabeled(1, []).expect("valid single node")
    }
}

#[cfg(test)]
mod tests {
    use super::named::*;
    use super::*;

    #[test]
    fn adjacency_examples() {
        assert_eq!(single().adjacency::<f64>().as_slice(), &[0.0]);
        assert_eq!(path(2).adjacency::<f64>().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        let k3 = complete(3).adjacency::<f64>();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k3[(i, j)], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn degree_examples() {
        assert_eq!(path(2).degree_vector(), vec![1, 1]);
        assert_eq!(path(3).degree_vector(), vec![1, 2, 1]);
        assert_eq!(single().degree_vector(), vec![0]);
    }

    #[test]
    fn normalized_laplacian_examples() {
        assert_eq!(path(2).normalized_laplacian::<f64>().as_slice(), &[1.0, -1.0, -1.0, 1.0]);
        let l = complete(3).normalized_laplacian::<f64>();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { -0.5 };
                assert!((l[(i, j)] - expect).abs() < 1e-15);
            }
        }
        assert_eq!(single().normalized_laplacian::<f64>().as_slice(), &[0.0]);
    }

    #[test]
    fn isolated_node_convention() {
        let g = Graph::unlabeled(3, [(0, 1)]).unwrap();
        let l = g.normalized_laplacian::<f64>();
        assert_eq!(l.row(2), &[0.0, 0.0, 0.0]);
        assert_eq!(l[(0, 0)], 1.0);
    }

    #[test]
    fn permute_examples() {
        let g = path(3);
        assert_eq!(g.permute(&[0, 1, 2]).unwrap(), g);
        let p2 = path(2);
        assert_eq!(p2.permute(&[1, 0]).unwrap().adjacency::<f64>(), p2.adjacency::<f64>());
        assert_eq!(g.permute(&[2, 1, 0]).unwrap().degree_vector(), vec![1, 2, 1]);
        assert_eq!(g.permute(&[0, 0, 1]), Err(GraphError::NotAPermutation(3)));
        assert_eq!(g.permute(&[0, 1]), Err(GraphError::NotAPermutation(3)));
    }

    #[test]
    fn construction_errors() {
        assert_eq!(Graph::unlabeled(0, []), Err(GraphError::Empty));
        assert_eq!(Graph::unlabeled(2, [(0, 2)]), Err(GraphError::EdgeOutOfRange(0, 2, 2)));
        assert_eq!(Graph::unlabeled(2, [(1, 1)]), Err(GraphError::SelfLoop(1)));
        assert!(matches!(Graph::new(2, [], vec![0]), Err(GraphError::LabelCount { .. })));
        let g = Graph::unlabeled(2, [(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
    }
}
