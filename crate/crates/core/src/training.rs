//! Epoch loop, evaluation metrics and the model-selection protocol.
//!
//! Selection works on a single "higher is better" score: accuracy for
//! classification, negative MAE for regression.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, AutodiffError, LrSchedule, Tensor};
use crate::data::{DatasetBundle, Split};
use crate::gckn::{fit_unsupervised, sample_path_features, GcknError, NystromEmbedding, MAX_FIT_SAMPLES};
use crate::model::{GraphBatch, GraphInputs, GraphiT, ModelConfig, ModelError, StructureEncoding, Task};
use crate::{Scalar, Target};

/// Epochs averaged for the selection score and the test estimate.
pub const SELECTION_WINDOW: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss became non-finite ({value}) in epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("prediction {index} is not finite")]
    NonFinitePrediction { index: usize },
    #[error("{got} predictions for {expected} targets")]
    PredictionCount { got: usize, expected: usize },
    #[error("target {0} is missing or of the wrong kind")]
    Target(usize),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("cannot select from an empty grid")]
    EmptyGrid,
    #[error("records line {line}: {reason}")]
    Records { line: usize, reason: String },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("epoch {epoch}: {source}")]
    Step { epoch: usize, source: AutodiffError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gckn(#[from] GcknError),
}

/// Which indices the model is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitOn {
    Train,
    /// Retraining of a selected configuration.
    TrainVal,
}

impl fmt::Display for FitOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitOn::Train => "train",
            FitOn::TrainVal => "train+val",
        })
    }
}

impl FromStr for FitOn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(FitOn::Train),
            "train+val" | "trainval" => Ok(FitOn::TrainVal),
            _ => Err(format!("unknown fit set `{s}` (expected train or train+val)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub fit_on: FitOn,
    /// Train on a seeded subsample of this many fit graphs.
    pub train_subsample: Option<usize>,
}

impl TrainConfig {
    /// Classification defaults: 300 epochs, batch 32, halving schedule.
    pub fn classification() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            schedule: LrSchedule::Halving,
            seed: 0,
            fit_on: FitOn::Train,
            train_subsample: None,
        }
    }

    /// Regression defaults: batch 128, warmup schedule.
    pub fn regression() -> Self {
        Self { batch_size: 128, schedule: LrSchedule::Warmup, ..Self::classification() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.train_subsample == Some(0) {
            return Err("train_subsample must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Mae,
}

impl Metric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classify { .. } => Metric::Accuracy,
            Task::Regress => Metric::Mae,
        }
    }

    /// Higher-is-better form of a metric value.
    pub fn score(self, value: f64) -> f64 {
        match self {
            Metric::Accuracy => value,
            Metric::Mae => -value,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mae => "mae",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "mae" => Ok(Metric::Mae),
            _ => Err(format!("unknown metric `{s}`")),
        }
    }
}

/// Mean loss of raw predictions: cross-entropy from `[B, 1, C]` logits or
/// absolute error of `[B, 1, 1]` outputs.
pub fn loss<T: Scalar>(task: Task, predictions: &Tensor<T>, targets: &[Target]) -> Result<f64, TrainError> {
    let (rows, c) = check_predictions(predictions, targets)?;
    let mut total = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let row = &rows[i * c..(i + 1) * c];
        total += match (task, t) {
            (Task::Classify { classes }, Target::Class(y)) if *y < classes && c == classes => {
                // log-sum-exp as ln1p of the non-maximal terms, accurate at large margins
                let arg = argmax(row);
                let m = row[arg];
                let rest: f64 = row.iter().enumerate().filter(|&(j, _)| j != arg).map(|(_, x)| (x - m).exp()).sum();
                rest.ln_1p() + (m - row[*y])
            }
            (Task::Regress, Target::Regression(y)) if c == 1 => (row[0] - y).abs(),
            _ => return Err(TrainError::Target(i)),
        };
    }
    Ok(total / targets.len() as f64)
}

/// Accuracy of `[B, 1, C]` logits (first maximum wins) or MAE of `[B, 1, 1]`
/// outputs.
pub fn metric<T: Scalar>(task: Task, predictions: &Tensor<T>, targets: &[Target]) -> Result<f64, TrainError> {
    let (rows, c) = check_predictions(predictions, targets)?;
    let mut total = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let row = &rows[i * c..(i + 1) * c];
        total += match (task, t) {
            (Task::Classify { .. }, Target::Class(y)) => f64::from(u8::from(argmax(row) == *y)),
            (Task::Regress, Target::Regression(y)) => (row[0] - y).abs(),
            _ => return Err(TrainError::Target(i)),
        };
    }
    Ok(total / targets.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |b, (j, &x)| if x > row[b] { j } else { b })
}

/// Mean taken relative to the first value, so a constant sequence averages
/// to exactly that constant.
fn mean(values: &[f64]) -> f64 {
    let c = values[0];
    c + values.iter().map(|v| v - c).sum::<f64>() / values.len() as f64
}

fn check_predictions<T: Scalar>(p: &Tensor<T>, targets: &[Target]) -> Result<(Vec<f64>, usize), TrainError> {
    let [b, r, c] = p.shape();
    if b != targets.len() || r != 1 {
        return Err(TrainError::PredictionCount { got: b * r, expected: targets.len() });
    }
    if targets.is_empty() {
        return Err(TrainError::EmptySet("target"));
    }
    let rows: Vec<f64> = p.data().iter().map(|x| x.as_f64()).collect();
    if let Some(k) = rows.iter().position(|x| !x.is_finite()) {
        return Err(TrainError::NonFinitePrediction { index: k / c });
    }
    Ok((rows, c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the last optimizer step in the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} lr={} train_loss={} val_loss={} val_metric={} test_metric={}",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.val_metric, self.test_metric
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub metric: Metric,
    pub epochs: Vec<EpochRecord>,
}

fn tail_mean(values: impl DoubleEndedIterator<Item = f64>) -> f64 {
    let tail: Vec<f64> = values.rev().take(SELECTION_WINDOW).collect();
    if tail.is_empty() {
        return f64::NAN;
    }
    mean(&tail)
}

impl RunRecord {
    /// Mean validation score (higher is better) over the final
    /// `min(50, epochs)` epochs.
    pub fn selection_score(&self) -> f64 {
        self.metric.score(tail_mean(self.epochs.iter().map(|e| e.val_metric)))
    }

    /// Mean test metric over the final `min(50, epochs)` epochs.
    pub fn test_estimate(&self) -> f64 {
        tail_mean(self.epochs.iter().map(|e| e.test_metric))
    }

    /// Header line of the records file.
    pub fn header(&self) -> String {
        format!("# graphit-records v1 config_hash={} metric={}", self.config_hash, self.metric.name())
    }

    /// One `key=value` line per epoch under a `#` header.
    pub fn to_text(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(s, "{}", e.to_line());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let bad = |line: usize, reason: String| TrainError::Records { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty records".into()))?;
        let header = header.strip_prefix("# graphit-records v1").ok_or_else(|| bad(1, "missing `# graphit-records v1` header".into()))?;
        let mut hash = None;
        let mut metric = None;
        for kv in header.split_whitespace() {
            match kv.split_once('=') {
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("metric", v)) => metric = Some(v.parse().map_err(|e| bad(1, e))?),
                _ => return Err(bad(1, format!("unexpected header field `{kv}`"))),
            }
        }
        let mut epochs = Vec::new();
        for (i, l) in lines {
            let mut vals = [0.0; 6];
            let keys = ["epoch", "lr", "train_loss", "val_loss", "val_metric", "test_metric"];
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != keys.len() {
                return Err(bad(i + 1, format!("expected {} fields, found {}", keys.len(), fields.len())));
            }
            for ((f, k), v) in fields.iter().zip(keys).zip(&mut vals) {
                let x = f
                    .strip_prefix(k)
                    .and_then(|r| r.strip_prefix('='))
                    .ok_or_else(|| bad(i + 1, format!("expected `{k}=`, found `{f}`")))?;
                *v = x.parse().map_err(|_| bad(i + 1, format!("`{k}` is not a number: `{x}`")))?;
            }
            epochs.push(EpochRecord {
                epoch: vals[0] as usize,
                lr: vals[1],
                train_loss: vals[2],
                val_loss: vals[3],
                val_metric: vals[4],
                test_metric: vals[5],
            });
        }
        Ok(Self {
            config_hash: hash.ok_or_else(|| bad(1, "header lacks `config_hash`".into()))?,
            metric: metric.ok_or_else(|| bad(1, "header lacks `metric`".into()))?,
            epochs,
        })
    }

    pub fn summary_line(&self, dataset: &str) -> String {
        format!(
            "dataset={dataset} config_hash={} epochs={} metric={} selection_score={} test_metric={}",
            self.config_hash,
            self.epochs.len(),
            self.metric.name(),
            self.selection_score(),
            self.test_estimate()
        )
    }
}

/// A finished run: its record, the trained model and optimizer, and the
/// fitted path embedding together with the graph indices it was fitted on.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub record: RunRecord,
    pub model: GraphiT<T>,
    pub adam: Adam<T>,
    pub gckn: Option<NystromEmbedding<T>>,
    pub fit_indices: Vec<usize>,
}

/// The graphs the model is fitted on: train (or train ∪ val), optionally
/// subsampled with the run seed, in increasing order.
pub fn fit_indices(split: &Split, cfg: &TrainConfig) -> Vec<usize> {
    let mut idx = split.train.clone();
    if cfg.fit_on == FitOn::TrainVal {
        idx.extend(&split.val);
    }
    if let Some(s) = cfg.train_subsample.filter(|&s| s < idx.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3);
        idx.shuffle(&mut rng);
        idx.truncate(s);
    }
    idx.sort_unstable();
    idx
}

/// Fits the path embedding on the given graphs only.
pub fn fit_gckn<T: Scalar>(
    bundle: &DatasetBundle,
    indices: &[usize],
    structure: &StructureEncoding,
    seed: u64,
) -> Result<Option<NystromEmbedding<T>>, TrainError> {
    let StructureEncoding::Gckn { path_size, filters, sigma } = *structure else { return Ok(None) };
    let samples = sample_path_features::<T>(indices.iter().map(|&i| &bundle.graphs[i]), path_size, bundle.vocab, MAX_FIT_SAMPLES, seed)?;
    Ok(Some(fit_unsupervised(&samples, filters, sigma, path_size, bundle.vocab, seed)?))
}

fn targets(items: &[&GraphInputs<impl Scalar>]) -> Result<Vec<Target>, TrainError> {
    items.iter().enumerate().map(|(i, g)| g.target.ok_or(TrainError::Target(i))).collect()
}

/// Loss and metric of `model` over `items`, evaluated in batches with LapPE
/// signs fixed to `+1`.
pub fn evaluate<T: Scalar>(model: &GraphiT<T>, items: &[&GraphInputs<T>], batch_size: usize) -> Result<(f64, f64), TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let task = model.config().task;
    let (mut l, mut m) = (0.0, 0.0);
    for chunk in items.chunks(batch_size.max(1)) {
        let batch = GraphBatch::assemble(chunk, None)?;
        let pred = model.predict(&batch)?;
        let ys = targets(chunk)?;
        let w = chunk.len() as f64;
        l += w * loss(task, &pred, &ys)?;
        m += w * metric(task, &pred, &ys)?;
    }
    let n = items.len() as f64;
    Ok((l / n, m / n))
}

/// Trains one configuration on one split.
///
/// Each epoch reshuffles the fit graphs; with LapPE every training batch draws
/// an independent `±1` per eigenvector column per graph. `on_epoch` sees every
/// record as soon as it is complete.
pub fn train_one<T: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    bundle: &DatasetBundle,
    split: &Split,
    config_hash: &str,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    model_cfg.validate().map_err(|e| TrainError::Model(ModelError::Config(e)))?;
    train_cfg.validate().map_err(TrainError::Config)?;
    let fit = fit_indices(split, train_cfg);
    if fit.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    if split.test.is_empty() {
        return Err(TrainError::EmptySet("test"));
    }
    let gckn = fit_gckn::<T>(bundle, &fit, &model_cfg.structure, train_cfg.seed)?;

    let mut inputs: Vec<Option<GraphInputs<T>>> = vec![None; bundle.len()];
    for &i in fit.iter().chain(&split.val).chain(&split.test) {
        if inputs[i].is_none() {
            let g = bundle.graphs.get(i).ok_or_else(|| TrainError::Config(format!("split index {i} out of range")))?;
            inputs[i] = Some(GraphInputs::prepare(g, model_cfg, gckn.as_ref())?);
        }
    }
    let get = |idx: &[usize]| -> Vec<&GraphInputs<T>> { idx.iter().map(|&i| inputs[i].as_ref().expect("prepared")).collect() };
    let val = get(&split.val);
    let test = get(&split.test);
    let lappe_k = match model_cfg.structure {
        StructureEncoding::LapPe { k } => Some(k),
        _ => None,
    };

    let mut model = GraphiT::<T>::new(model_cfg.clone(), train_cfg.seed)?;
    let adam_cfg = AdamConfig { lr: train_cfg.lr, weight_decay: train_cfg.weight_decay, ..AdamConfig::default() };
    let mut adam = Adam::new(adam_cfg, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    dropout_rng.set_stream(2);

    let mut order = fit.clone();
    let mut epochs = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut lr = train_cfg.lr;
        for chunk in order.chunks(train_cfg.batch_size) {
            let items = get(chunk);
            let signs: Option<Vec<Vec<T>>> = lappe_k
                .map(|k| items.iter().map(|_| (0..k).map(|_| if rng.gen::<bool>() { T::one() } else { -T::one() }).collect()).collect());
            let batch = GraphBatch::assemble(&items, signs.as_deref())?;
            let (l, grads) = model.loss_and_gradients(&batch, Some(&mut dropout_rng))?;
            let l = l.as_f64();
            if !l.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, value: l });
            }
            lr = train_cfg.schedule.lr(train_cfg.lr, epoch as u64, adam.step_count() + 1);
            adam.set_lr(lr);
            adam.step(model.params_mut(), &grads).map_err(|source| TrainError::Step { epoch, source })?;
            total += l * chunk.len() as f64;
        }
        let (val_loss, val_metric) = evaluate(&model, &val, train_cfg.batch_size)?;
        let (_, test_metric) = evaluate(&model, &test, train_cfg.batch_size)?;
        let rec = EpochRecord { epoch, lr, train_loss: total / fit.len() as f64, val_loss, val_metric, test_metric };
        on_epoch(&rec);
        epochs.push(rec);
    }
    let record = RunRecord { config_hash: config_hash.to_string(), metric: Metric::for_task(model_cfg.task), epochs };
    Ok(TrainOutcome { record, model, adam, gckn, fit_indices: fit })
}

/// Grid winner: highest selection score, ties broken by the
/// lexicographically smallest config hash.
pub fn select(runs: &[RunRecord]) -> Result<&RunRecord, TrainError> {
    runs.iter()
        .min_by(|a, b| b.selection_score().total_cmp(&a.selection_score()).then_with(|| a.config_hash.cmp(&b.config_hash)))
        .ok_or(TrainError::EmptyGrid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub selected: String,
    pub selection_score: f64,
    /// Test estimate of the retrained winner.
    pub test_metric: f64,
}

/// Selects the winner of one split's grid and reports the test estimate of
/// its retraining, as produced by `retrain`.
pub fn select_and_report(
    runs: &[RunRecord],
    retrain: impl FnOnce(&RunRecord) -> Result<RunRecord, TrainError>,
) -> Result<SplitReport, TrainError> {
    let best = select(runs)?;
    let retrained = retrain(best)?;
    Ok(SplitReport { selected: best.config_hash.clone(), selection_score: best.selection_score(), test_metric: retrained.test_estimate() })
}

/// Mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    Some((m, var.sqrt()))
}
