mod common;

use common::{random_connected, random_perm};
use graphit::gckn::{count_paths, embed_nodes, enumerate_paths, fit_unsupervised, path_features, sample_path_features, NystromEmbedding};
use graphit::graph::named;
use graphit::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn falling(n: usize, l: usize) -> usize {
    (0..l).map(|i| n - i).product()
}

#[test]
fn complete_graph_path_counts() {
    // from one node of K_n: (n-1)(n-2)...(n-l) paths with l edges
    for n in 1..=7 {
        let g = named::complete(n);
        for k in 1..=5 {
            let expected: usize = (0..k.min(n)).map(|l| falling(n - 1, l)).sum();
            assert_eq!(count_paths(&g, 0, k).unwrap(), expected, "K_{n}, k = {k}");
        }
    }
}

#[test]
fn cycle_and_path_counts() {
    // a cycle offers two directions for every length below n
    for n in 3..=8 {
        for k in 1..=n {
            assert_eq!(count_paths(&named::cycle(n), 0, k).unwrap(), 1 + 2 * (k - 1));
        }
    }
    let p = named::path(6);
    assert_eq!(count_paths(&p, 0, 4).unwrap(), 4);
    assert_eq!(count_paths(&p, 2, 4).unwrap(), 1 + 2 + 2 + 1);
}

#[test]
fn paths_are_simple_and_prefix_closed() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let g = random_connected(&mut rng, 9, 0.35, 3);
    for u in 0..g.n() {
        let set = enumerate_paths(&g, u, 4).unwrap();
        assert_eq!(set.paths[0], vec![u]);
        for p in &set.paths {
            assert!(p.windows(2).all(|w| g.has_edge(w[0], w[1])));
            let mut s = p.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), p.len());
            assert!(set.paths.contains(&p[..p.len() - 1].to_vec()) || p.len() == 1);
        }
    }
}

fn fitted(graphs: &[Graph], k: usize, vocab: usize) -> NystromEmbedding<f64> {
    let samples = sample_path_features::<f64>(graphs, k, vocab, 5000, 3).unwrap();
    fit_unsupervised(&samples, 12, 0.6, k, vocab, 4).unwrap()
}

#[test]
fn embedding_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let graphs: Vec<Graph> = (0..5).map(|_| random_connected(&mut rng, 8, 0.3, 3)).collect();
    let emb = fitted(&graphs, 3, 3);
    for g in &graphs {
        let perm = random_perm(&mut rng, g.n());
        let x = embed_nodes(g, &emb, 3).unwrap().values;
        let y = embed_nodes(&g.permute(&perm).unwrap(), &emb, 3).unwrap().values;
        for u in 0..g.n() {
            for (a, b) in x.row(u).iter().zip(y.row(perm[u])) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn embedding_sums_path_feature_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let g = random_connected(&mut rng, 7, 0.3, 2);
    let emb = fitted(std::slice::from_ref(&g), 4, 2);
    let fast = embed_nodes(&g, &emb, 4).unwrap().values;
    for u in 0..g.n() {
        let mut naive = vec![0.0; emb.num_anchors()];
        for p in enumerate_paths(&g, u, 4).unwrap().paths {
            let psi = emb.embed(&path_features::<f64>(&g, &p, 2, 4).unwrap());
            naive.iter_mut().zip(&psi).for_each(|(s, v)| *s += v);
        }
        for (a, b) in fast.row(u).iter().zip(&naive) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}

#[test]
fn feature_map_reproduces_kernel_on_anchors() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let g = random_connected(&mut rng, 10, 0.3, 3);
    let emb = fitted(&[g], 3, 3);
    for i in 0..emb.num_anchors() {
        let zi = emb.anchors.row(i).to_vec();
        let pi = emb.embed(&zi);
        for j in 0..emb.num_anchors() {
            let pj = emb.embed(emb.anchors.row(j));
            let dot: f64 = pi.iter().zip(&pj).map(|(a, b)| a * b).sum();
            let exact = emb.kernel_vector(&zi)[j];
            // exact up to the ridge added to the anchor Gram matrix
            assert!((dot - exact).abs() < 1e-3, "({i}, {j}): {dot} vs {exact}");
        }
    }
}

#[test]
fn fitted_embedding_survives_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let g = random_connected(&mut rng, 8, 0.3, 3);
    let emb = fitted(std::slice::from_ref(&g), 3, 3);
    let back = NystromEmbedding::<f64>::from_json(&emb.to_json()).unwrap();
    assert_eq!(back, emb);
    assert_eq!(embed_nodes(&g, &back, 3).unwrap(), embed_nodes(&g, &emb, 3).unwrap());
}
