use std::fs;
use std::path::{Path, PathBuf};

use graphit::data::{load_tu, load_zinc, make_splits, one_hot, write_tu, write_zinc, DataError, DatasetBundle, Split, SplitPlan, TaskKind};
use graphit::{Graph, Target};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/TOY")
}

fn mutag_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

#[test]
fn toy_fixture() {
    let b = load_tu(&fixtures(), "TOY").unwrap();
    assert_eq!(b.len(), 2);
    for g in &b.graphs {
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
    }
    assert_eq!(b.task, TaskKind::Classification { classes: 2 });
    assert_eq!(b.class_values, vec![-1, 1]);
    assert_eq!(b.graphs[0].target(), Some(Target::Class(1)));
    assert_eq!(b.graphs[1].target(), Some(Target::Class(0)));
    assert_eq!(b.vocab, 2);
    assert_eq!(b.graphs[0].node_labels(), &[0, 1]);
}

#[test]
fn tu_round_trip() {
    let b = load_tu(&fixtures(), "TOY").unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_tu(&b, dir.path()).unwrap();
    assert_eq!(load_tu(dir.path(), "TOY").unwrap(), b);

    let m = load_tu(&mutag_dir(), "MUTAG").unwrap();
    write_tu(&m, dir.path()).unwrap();
    assert_eq!(load_tu(dir.path(), "MUTAG").unwrap(), m);
}

#[test]
fn mutag_statistics() {
    let b = load_tu(&mutag_dir(), "MUTAG").unwrap();
    assert_eq!(b.len(), 188);
    assert_eq!(b.num_classes(), Some(2));
    assert_eq!(b.max_nodes(), 28);
    assert_eq!(b.vocab, 7);
    assert!(b.graphs.iter().all(|g| g.n() > 0));
}

fn write_toy(dir: &Path, a: &str, ind: &str, gl: &str, nl: &str) {
    fs::write(dir.join("X_A.txt"), a).unwrap();
    fs::write(dir.join("X_graph_indicator.txt"), ind).unwrap();
    fs::write(dir.join("X_graph_labels.txt"), gl).unwrap();
    fs::write(dir.join("X_node_labels.txt"), nl).unwrap();
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), "1, 2\n2, x\n", "1\n1\n", "0\n", "0\n0\n");
    let e = load_tu(dir.path(), "X").unwrap_err();
    assert!(matches!(e, DataError::Parse { line: 2, .. }), "{e}");
    assert!(e.to_string().contains("X_A.txt:2"));

    write_toy(dir.path(), "1, 2\n2, 3\n", "1\n1\n2\n", "0\n1\n", "0\n0\n0\n");
    assert!(matches!(load_tu(dir.path(), "X").unwrap_err(), DataError::CrossingEdge { line: 2, .. }));

    write_toy(dir.path(), "1, 2\n", "1\n1\n", "0\n1\n", "0\n0\n");
    assert!(matches!(load_tu(dir.path(), "X").unwrap_err(), DataError::EmptyGraph(1)));

    fs::remove_file(dir.path().join("X_node_labels.txt")).unwrap();
    assert!(matches!(load_tu(dir.path(), "X").unwrap_err(), DataError::Io { .. }));
}

#[test]
fn duplicate_directed_edges_merge() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), "1, 2\n2, 1\n1, 2\n2, 3\n", "1\n1\n1\n", "5\n", "3\n7\n3\n");
    let b = load_tu(dir.path(), "X").unwrap();
    assert_eq!(b.graphs[0].edges(), &[(0, 1), (1, 2)]);
    assert_eq!(b.node_label_values, vec![3, 7]);
    assert_eq!(b.graphs[0].node_labels(), &[0, 1, 0]);
}

#[test]
fn one_hot_rows() {
    let b = load_tu(&mutag_dir(), "MUTAG").unwrap();
    for (g, m) in b.graphs.iter().zip(one_hot::<f64>(&b)) {
        assert_eq!(m.rows(), g.n());
        assert_eq!(m.cols(), 7);
        for i in 0..g.n() {
            assert_eq!(m.row(i).iter().sum::<f64>(), 1.0);
            assert_eq!(m[(i, g.node_labels()[i])], 1.0);
        }
    }
}

fn tiny_zinc() -> DatasetBundle {
    let graphs: Vec<Graph> = (0..12)
        .map(|k| {
            let n = 2 + k % 4;
            let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            Graph::new(n, edges, (0..n).map(|i| (i + k) % 5).collect()).unwrap().with_target(Target::Regression(k as f64 * 0.37 - 1.5))
        })
        .collect();
    DatasetBundle {
        name: "ZINC".into(),
        graphs,
        vocab: 5,
        task: TaskKind::Regression,
        node_label_values: (0..5).collect(),
        class_values: vec![],
        fixed_split: Some(Split { train: (0..8).collect(), val: vec![8, 9], test: vec![10, 11] }),
    }
}

#[test]
fn zinc_container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = tiny_zinc();
    write_zinc(&b, dir.path()).unwrap();
    assert_eq!(load_zinc(dir.path()).unwrap(), b);

    fs::write(dir.path().join("ZINC_test.index"), "10\n12\n").unwrap();
    assert!(matches!(load_zinc(dir.path()).unwrap_err(), DataError::SplitIndex { index: 12, .. }));
}

#[test]
fn zinc_edge_types_are_ignored() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ZINC_graphs.txt"), "# comment\n0.5 | 1 2 3 | 0-1:2 1-2:1\n").unwrap();
    for f in ["ZINC_train.index", "ZINC_val.index", "ZINC_test.index"] {
        fs::write(dir.path().join(f), "0\n").unwrap();
    }
    let b = load_zinc(dir.path()).unwrap();
    assert_eq!(b.graphs[0].edges(), &[(0, 1), (1, 2)]);
    assert_eq!(b.vocab, 4);
}

#[test]
fn split_plans() {
    let p = make_splits(10, "X", 0).unwrap();
    assert_eq!(p.splits.len(), 10);
    for s in &p.splits {
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert!(s.is_partition_of(10));
    }
    assert_eq!(make_splits(188, "MUTAG", 7).unwrap(), make_splits(188, "MUTAG", 7).unwrap());
    assert_ne!(make_splits(188, "MUTAG", 7).unwrap(), make_splits(188, "MUTAG", 8).unwrap());
    let m = make_splits(188, "MUTAG", 0).unwrap();
    for s in &m.splits {
        assert!(s.is_partition_of(188));
        assert!((s.train.len() as f64 - 150.4).abs() <= 1.0);
        assert!((s.val.len() as f64 - 18.8).abs() <= 1.0);
    }
    assert!(matches!(make_splits(9, "X", 0), Err(DataError::TooSmall(9))));
    assert_eq!(SplitPlan::from_text(&m.to_text()).unwrap(), m);
}
