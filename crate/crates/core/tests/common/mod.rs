#![allow(dead_code)]

use graphit::Graph;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Erdős–Rényi graph with random labels in `0..vocab`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, vocab: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let labels = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    Graph::new(n, edges, labels).unwrap()
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected(rng: &mut ChaCha8Rng, n: usize, extra: f64, vocab: usize) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..n {
        edges.push((order[rng.gen_range(0..k)], order[k]));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < extra {
                edges.push((i, j));
            }
        }
    }
    let labels = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    Graph::new(n, edges, labels).unwrap()
}

pub fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Plain softmax attention `softmax(QQᵀ/√d)·V` for one head, row-major.
pub fn softmax_attention(q: &[f64], v: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..d).map(|k| q[i * d + k] * q[j * d + k]).sum::<f64>() / (d as f64).sqrt();
        }
        let m = a[i * n..(i + 1) * n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = a[i * n..(i + 1) * n].iter().map(|x| (x - m).exp()).sum();
        for j in 0..n {
            a[i * n + j] = (a[i * n + j] - m).exp() / s;
        }
    }
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                out[i * d + k] += a[i * n + j] * v[j * d + k];
            }
        }
    }
    (out, a)
}
