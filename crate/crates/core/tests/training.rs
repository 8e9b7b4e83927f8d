mod common;

use graphit::autodiff::{LrSchedule, Tensor};
use graphit::data::{make_splits, DatasetBundle, Split, TaskKind};
use graphit::model::{GraphInputs, ModelConfig, StructureEncoding, Task};
use graphit::training::{
    aggregate, fit_gckn, fit_indices, loss, metric, select, select_and_report, train_one, EpochRecord, FitOn, Metric, RunRecord,
    TrainConfig, TrainError,
};
use graphit::{Graph, KernelFamily, KernelSpec, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cycles versus paths, labelled 1 and 0. Node labels are random so the
/// classes differ only in structure.
fn cycles_vs_paths(count: usize, seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..count)
        .map(|k| {
            let n = rng.gen_range(4..9);
            let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            if k % 2 == 1 {
                edges.push((n - 1, 0));
            }
            let labels = (0..n).map(|_| rng.gen_range(0..3)).collect();
            Graph::new(n, edges, labels).unwrap().with_target(Target::Class(k % 2))
        })
        .collect();
    DatasetBundle {
        name: "CYC".into(),
        graphs,
        vocab: 3,
        task: TaskKind::Classification { classes: 2 },
        node_label_values: vec![0, 1, 2],
        class_values: vec![0, 1],
        fixed_split: None,
    }
}

fn small_cfg(kernel: Option<KernelSpec>, structure: StructureEncoding) -> ModelConfig {
    let mut cfg = ModelConfig::new(1, 2, 8, kernel, Task::Classify { classes: 2 }, 3);
    cfg.structure = structure;
    cfg
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, ..TrainConfig { seed, ..TrainConfig::classification() } }
}

fn rec(val: &[f64], test: &[f64], hash: &str) -> RunRecord {
    RunRecord {
        config_hash: hash.into(),
        metric: Metric::Accuracy,
        epochs: val
            .iter()
            .zip(test)
            .enumerate()
            .map(|(epoch, (&val_metric, &test_metric))| EpochRecord {
                epoch,
                lr: 1e-3,
                train_loss: 0.5,
                val_loss: 0.5,
                val_metric,
                test_metric,
            })
            .collect(),
    }
}

#[test]
fn uniform_logits_give_ln2() {
    let p = Tensor::from_vec([3, 1, 2], vec![0.0, 0.0, 1.5, 1.5, -2.0, -2.0]);
    let ys = [Target::Class(0), Target::Class(1), Target::Class(0)];
    let l = loss(Task::Classify { classes: 2 }, &p, &ys).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn exact_regression_has_zero_loss() {
    let p = Tensor::from_vec([2, 1, 1], vec![0.25, -3.0]);
    let ys = [Target::Regression(0.25), Target::Regression(-3.0)];
    assert_eq!(loss(Task::Regress, &p, &ys).unwrap(), 0.0);
    assert_eq!(metric(Task::Regress, &p, &ys).unwrap(), 0.0);
}

#[test]
fn loss_vanishes_with_margin() {
    let task = Task::Classify { classes: 2 };
    let mut prev = f64::INFINITY;
    for m in [1.0f64, 10.0, 100.0] {
        let p = Tensor::from_vec([1, 1, 2], vec![m, 0.0]);
        let l = loss(task, &p, &[Target::Class(0)]).unwrap();
        // softplus(-m)
        let expected = (-m).exp().ln_1p();
        assert!((l - expected).abs() <= 1e-15 * expected.max(1e-300) + 1e-300, "{m}: {l} vs {expected}");
        assert!(l < prev);
        prev = l;
    }
    assert!(prev < 1e-40);
}

#[test]
fn loss_rejects_bad_predictions() {
    let task = Task::Classify { classes: 2 };
    let p = Tensor::from_vec([2, 1, 2], vec![0.0, 1.0, f64::NAN, 0.0]);
    let ys = [Target::Class(0), Target::Class(1)];
    assert!(matches!(loss(task, &p, &ys), Err(TrainError::NonFinitePrediction { index: 1 })));
    let p = Tensor::from_vec([1, 1, 2], vec![0.0, 1.0]);
    assert!(matches!(loss(task, &p, &ys), Err(TrainError::PredictionCount { .. })));
    assert!(matches!(loss(task, &p, &[Target::Regression(1.0)]), Err(TrainError::Target(0))));
}

#[test]
fn accuracy_metric() {
    let p = Tensor::from_vec([4, 1, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 3.0, 0.5, 0.5]);
    let ys = [Target::Class(0), Target::Class(0), Target::Class(1), Target::Class(0)];
    assert_eq!(metric(Task::Classify { classes: 2 }, &p, &ys).unwrap(), 0.75);
}

#[test]
fn selection_score_of_constant_sequence() {
    let r = rec(&[0.7; 120], &[0.6; 120], "a");
    assert_eq!(r.selection_score(), 0.7);
    assert_eq!(r.test_estimate(), 0.6);
    // only the final 50 epochs count
    let mut val = vec![0.0; 50];
    val.extend([1.0; 50]);
    assert_eq!(rec(&val, &val, "a").selection_score(), 1.0);
    // shorter runs average what they have
    assert!((rec(&[0.2, 0.4], &[0.0, 0.0], "a").selection_score() - 0.3).abs() < 1e-15);
    let mut r = rec(&[0.5; 10], &[0.5; 10], "a");
    r.metric = Metric::Mae;
    assert_eq!(r.selection_score(), -0.5);
}

#[test]
fn selection_and_aggregation() {
    let a = rec(&[0.8; 5], &[0.1; 5], "b");
    let b = rec(&[0.6; 5], &[0.9; 5], "a");
    assert_eq!(select(std::slice::from_ref(&a)).unwrap().config_hash, "b");
    assert_eq!(select(&[a.clone(), b.clone()]).unwrap().config_hash, "b");
    // equal scores: smallest hash
    let c = rec(&[0.8; 5], &[0.2; 5], "a");
    assert_eq!(select(&[a.clone(), c.clone()]).unwrap().config_hash, "a");
    assert!(matches!(select(&[]), Err(TrainError::EmptyGrid)));

    let rep = select_and_report(&[a, b], |w| {
        assert_eq!(w.config_hash, "b");
        Ok(rec(&[0.0; 60], &[0.5; 60], "b"))
    })
    .unwrap();
    assert_eq!(rep.selected, "b");
    assert_eq!(rep.test_metric, 0.5);

    assert_eq!(aggregate(&[0.9; 10]), Some((0.9, 0.0)));
    let (m, s) = aggregate(&[1.0, 3.0]).unwrap();
    assert_eq!((m, s), (2.0, 1.0));
    assert_eq!(aggregate(&[]), None);
}

#[test]
fn records_round_trip() {
    let mut r = rec(&[0.8, 0.123456789012345], &[0.1, 1.0 / 3.0], "0123abcd");
    r.epochs[1].lr = 1e-3 * 0.5f64.powi(5);
    let text = r.to_text();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(RunRecord::from_text(&text).unwrap(), r);
    assert!(matches!(
        RunRecord::from_text("# graphit-records v1 config_hash=x metric=mae\nepoch=0 lr=x"),
        Err(TrainError::Records { line: 2, .. })
    ));
    assert!(RunRecord::from_text("epoch=0").is_err());
}

#[test]
fn final_learning_rate_after_300_epochs() {
    let b = cycles_vs_paths(20, 0);
    let split = make_splits(b.len(), "CYC", 0).unwrap().splits.remove(0);
    let mut cfg = small_cfg(None, StructureEncoding::None);
    cfg.layers = 1;
    cfg.d_model = 4;
    cfg.heads = 1;
    let mut tc = quick(300, 0);
    tc.batch_size = 32;
    let out = train_one::<f64>(&cfg, &tc, &b, &split, "h", |_| {}).unwrap();
    let e = &out.record.epochs;
    assert_eq!(e.len(), 300);
    assert_eq!(e[299].lr, 1e-3 * 2f64.powi(-5));
    assert_eq!(e[0].lr, 1e-3);
    assert_eq!(e[50].lr, 5e-4);
}

#[test]
fn training_is_deterministic() {
    let b = cycles_vs_paths(30, 1);
    let split = make_splits(b.len(), "CYC", 4).unwrap().splits.remove(2);
    let diff = Some(KernelSpec::new(KernelFamily::Diffusion { beta: 1.0 }).unwrap());
    for structure in [StructureEncoding::None, StructureEncoding::LapPe { k: 3 }] {
        let mut cfg = small_cfg(diff, structure);
        cfg.dropout = 0.1;
        let a = train_one::<f64>(&cfg, &quick(4, 9), &b, &split, "h", |_| {}).unwrap();
        let c = train_one::<f64>(&cfg, &quick(4, 9), &b, &split, "h", |_| {}).unwrap();
        assert_eq!(a.record, c.record);
        assert_eq!(a.model, c.model);
        let d = train_one::<f64>(&cfg, &quick(4, 10), &b, &split, "h", |_| {}).unwrap();
        assert_ne!(a.record, d.record);
    }
}

#[test]
fn training_learns_cycles_from_paths() {
    let b = cycles_vs_paths(60, 2);
    let split = make_splits(b.len(), "CYC", 0).unwrap().splits.remove(0);
    let cfg = small_cfg(Some(KernelSpec::new(KernelFamily::Adjacency).unwrap()), StructureEncoding::None);
    let mut seen = 0;
    let out = train_one::<f64>(&cfg, &TrainConfig { lr: 1e-2, ..quick(60, 0) }, &b, &split, "h", |e| {
        assert_eq!(e.epoch, seen);
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 60);
    let e = &out.record.epochs;
    assert!(e[59].train_loss < 0.5 * e[0].train_loss, "{} -> {}", e[0].train_loss, e[59].train_loss);
}

#[test]
fn f32_training_runs() {
    let b = cycles_vs_paths(20, 3);
    let split = make_splits(b.len(), "CYC", 0).unwrap().splits.remove(0);
    let cfg = small_cfg(Some(KernelSpec::new(KernelFamily::Diffusion { beta: 0.5 }).unwrap()), StructureEncoding::LapPe { k: 2 });
    let out = train_one::<f32>(&cfg, &quick(3, 0), &b, &split, "h", |_| {}).unwrap();
    assert!(out.record.epochs.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn regression_with_warmup() {
    let mut b = cycles_vs_paths(20, 4);
    for g in &mut b.graphs {
        let y = g.n() as f64 / 4.0;
        *g = g.clone().with_target(Target::Regression(y));
    }
    b.task = TaskKind::Regression;
    let split = make_splits(b.len(), "CYC", 0).unwrap().splits.remove(0);
    let mut cfg = small_cfg(None, StructureEncoding::None);
    cfg.task = Task::Regress;
    let tc = TrainConfig { epochs: 3, batch_size: 8, seed: 0, ..TrainConfig::regression() };
    let out = train_one::<f64>(&cfg, &tc, &b, &split, "h", |_| {}).unwrap();
    // two optimizer steps per epoch
    let expected = LrSchedule::Warmup.lr(1e-3, 0, 6);
    assert_eq!(out.record.epochs[2].lr, expected);
    assert_eq!(out.record.metric, Metric::Mae);
    assert!(out.record.selection_score() <= 0.0);
}

#[test]
fn non_finite_loss_reports_epoch() {
    let mut b = cycles_vs_paths(20, 5);
    for g in &mut b.graphs {
        *g = g.clone().with_target(Target::Regression(f64::INFINITY));
    }
    b.task = TaskKind::Regression;
    let split = make_splits(b.len(), "CYC", 0).unwrap().splits.remove(0);
    let mut cfg = small_cfg(None, StructureEncoding::None);
    cfg.task = Task::Regress;
    let r = train_one::<f64>(&cfg, &quick(2, 0), &b, &split, "h", |_| {});
    assert!(matches!(r, Err(TrainError::NonFiniteLoss { epoch: 0, .. })), "{r:?}");
}

#[test]
fn path_embedding_is_fitted_on_train_only() {
    let b = cycles_vs_paths(40, 6);
    let split = make_splits(b.len(), "CYC", 0).unwrap().splits.remove(0);
    let structure = StructureEncoding::Gckn { path_size: 3, filters: 8, sigma: 0.6 };
    let cfg = small_cfg(None, structure);
    let out = train_one::<f64>(&cfg, &quick(1, 0), &b, &split, "h", |_| {}).unwrap();
    let mut train = split.train.clone();
    train.sort_unstable();
    assert_eq!(out.fit_indices, train);
    assert_eq!(out.gckn.as_ref(), fit_gckn(&b, &train, &structure, 0).unwrap().as_ref());

    // swapping test graphs in for val/test changes nothing about the fit
    let swapped = Split { train: split.train.clone(), val: split.test.clone(), test: split.val.clone() };
    let out2 = train_one::<f64>(&cfg, &quick(1, 0), &b, &swapped, "h", |_| {}).unwrap();
    assert_eq!(out2.fit_indices, out.fit_indices);
    assert_eq!(out2.gckn, out.gckn);

    let tc = TrainConfig { fit_on: FitOn::TrainVal, ..quick(1, 0) };
    let mut tv: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
    tv.sort_unstable();
    assert_eq!(fit_indices(&split, &tc), tv);
}

#[test]
fn subsample_is_seeded_subset() {
    let split = Split { train: (0..100).collect(), val: vec![100], test: vec![101] };
    let tc = TrainConfig { train_subsample: Some(10), ..quick(1, 3) };
    let a = fit_indices(&split, &tc);
    assert_eq!(a.len(), 10);
    assert_eq!(a, fit_indices(&split, &tc));
    assert_ne!(a, fit_indices(&split, &TrainConfig { seed: 4, ..tc.clone() }));
    assert!(a.windows(2).all(|w| w[0] < w[1] && w[1] < 100));
}

#[test]
fn sign_flips_preserve_magnitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = small_cfg(None, StructureEncoding::LapPe { k: 4 });
    for _ in 0..10 {
        let g = common::random_graph(&mut rng, 9, 0.3, 3);
        let inp = GraphInputs::<f64>::prepare(&g, &cfg, None).unwrap();
        let sorted_abs = |s: Option<&[f64]>| {
            let mut v: Vec<f64> = inp.features(s).unwrap().as_slice().iter().map(|x| x.abs()).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let base = sorted_abs(None);
        for _ in 0..5 {
            let s: Vec<f64> = (0..4).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            assert_eq!(sorted_abs(Some(&s)), base);
        }
    }
}

#[test]
fn invalid_training_config() {
    let b = cycles_vs_paths(20, 0);
    let split = make_splits(b.len(), "CYC", 0).unwrap().splits.remove(0);
    let cfg = small_cfg(None, StructureEncoding::None);
    let r = train_one::<f64>(&cfg, &TrainConfig { batch_size: 0, ..quick(1, 0) }, &b, &split, "h", |_| {});
    assert!(matches!(r, Err(TrainError::Config(ref m)) if m.contains("batch_size")));
}
