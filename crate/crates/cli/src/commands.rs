use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use graphit::autodiff::{read_checkpoint, write_checkpoint, CheckpointError};
use graphit::data::{plan_for, DataError, DatasetBundle};
use graphit::gckn::NystromEmbedding;
use graphit::kernels::{build_kernel, KernelError};
use graphit::model::{write_attention, ExportError, GraphInputs, GraphiT, ModelError, StructureEncoding};
use graphit::training::{aggregate, select, train_one, FitOn, Metric, RunRecord, SplitReport, TrainError};
use graphit::Scalar;
use rayon::prelude::*;

use crate::config::{normalize_key, parse_pairs, ConfigError, ExperimentConfig, KernelChoice, Precision, KEYS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("checkpoint does not match its configuration: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Index(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Short machine-readable category printed as `error[<kind>]`.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Train(_) => "train",
            CliError::Model(_) => "model",
            CliError::Kernel(_) => "kernel",
            CliError::Checkpoint(_) | CliError::Mismatch(_) => "checkpoint",
            CliError::Export(_) => "export",
            CliError::Index(_) => "index",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Applies `(key, value)` overrides on top of parsed pairs, replacing keys
/// already present.
pub fn merge_pairs(base: &mut Vec<(String, String)>, overrides: &[(String, String)]) {
    for (k, v) in overrides {
        let k = normalize_key(k);
        base.retain(|(b, _)| normalize_key(b) != k);
        base.push((k, v.clone()));
    }
}

/// Config file (if any) plus overrides.
pub fn load_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig, CliError> {
    let mut pairs = match file {
        Some(p) => parse_pairs(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => Vec::new(),
    };
    merge_pairs(&mut pairs, overrides);
    Ok(ExperimentConfig::from_pairs(&pairs)?)
}

pub fn cmd_kernel(cfg: &ExperimentConfig, graph: usize, out: Option<&Path>) -> Result<String, CliError> {
    let spec = cfg.kernel_spec().ok_or_else(|| CliError::Usage("the kernel command needs `kernel` other than none".into()))?;
    let bundle = cfg.load_dataset()?;
    let g = bundle
        .graphs
        .get(graph)
        .ok_or_else(|| CliError::Index(format!("graph index {graph} out of range, {} has {} graphs", bundle.name, bundle.len())))?;
    let k = build_kernel::<f64>(g, &spec)?;
    let path = out.map_or_else(
        || cfg.results_root().join(&cfg.dataset).join("kernels").join(format!("{}_g{graph}.txt", spec.family_name())),
        Path::to_path_buf,
    );
    let mut w = create(&path)?;
    k.write_dump(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
    let (lo, hi) = k.eigen_range()?;
    Ok(format!("graph={graph} n={} {spec} min_eig={lo:.6e} max_eig={hi:.6e} psd={} file={}", k.n(), lo >= -1e-8, path.display()))
}

/// A finished (or resumed) training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub summary: String,
    pub resumed: bool,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainResult, CliError> {
    let bundle = cfg.load_dataset()?;
    train_on(cfg, &bundle)
}

/// Runs one configuration and writes `config.txt`, `records.txt`,
/// `checkpoint.bin`, the fitted path embedding when there is one, and
/// finally `summary.txt`, whose presence marks the run complete.
pub fn train_on(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<TrainResult, CliError> {
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, bundle),
        Precision::F64 => train_as::<f64>(cfg, bundle),
    }
}

fn train_as<T: Scalar>(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<TrainResult, CliError> {
    let model_cfg = cfg.model_config(bundle)?;
    let split = cfg.split_of(bundle)?;
    let dir = cfg.run_dir();
    let hash = cfg.hash();
    let canonical = cfg.canonical_text();
    write_file(&dir.join("config.txt"), &canonical)?;
    let records_path = dir.join("records.txt");
    let mut records = create(&records_path)?;
    let mut io_error = None;
    let header = RunRecord { config_hash: hash.clone(), metric: Metric::for_task(model_cfg.task), epochs: vec![] }.header();
    if let Err(e) = writeln!(records, "{header}") {
        io_error = Some(e);
    }
    let out = train_one::<T>(&model_cfg, &cfg.train_config(), bundle, &split, &hash, |e| {
        if io_error.is_none() {
            if let Err(err) = writeln!(records, "{}", e.to_line()).and_then(|_| records.flush()) {
                io_error = Some(err);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(CliError::Io { path: records_path, source: e });
    }
    let ck_path = dir.join("checkpoint.bin");
    let mut ck = create(&ck_path)?;
    write_checkpoint(&mut ck, cfg.epochs as u64, &canonical, out.model.params(), Some(&out.adam))?;
    ck.flush().map_err(io_err(&ck_path))?;
    if let Some(emb) = &out.gckn {
        write_file(&dir.join("gckn.json"), &emb.to_json())?;
    }
    let summary = out.record.summary_line(&cfg.dataset);
    write_file(&dir.join("summary.txt"), &format!("{summary}\n"))?;
    Ok(TrainResult { dir, record: out.record, summary, resumed: false })
}

/// Reuses a completed run directory, or trains.
pub fn run_or_resume(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<TrainResult, CliError> {
    let dir = cfg.run_dir();
    let summary_path = dir.join("summary.txt");
    if summary_path.exists() {
        let records_path = dir.join("records.txt");
        let text = fs::read_to_string(&records_path).map_err(io_err(&records_path))?;
        let record = RunRecord::from_text(&text)?;
        let summary = fs::read_to_string(&summary_path).map_err(io_err(&summary_path))?.trim().to_string();
        return Ok(TrainResult { dir, record, summary, resumed: true });
    }
    train_on(cfg, bundle)
}

pub fn cmd_prepare_splits(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<String, CliError> {
    let bundle = cfg.load_dataset()?;
    let plan = plan_for(&bundle, cfg.split_seed)?;
    let path =
        out.map_or_else(|| cfg.results_root().join(&cfg.dataset).join(format!("splits_seed{}.txt", cfg.split_seed)), Path::to_path_buf);
    write_file(&path, &plan.to_text())?;
    Ok(format!("dataset={} graphs={} splits={} file={}", bundle.name, plan.n, plan.splits.len(), path.display()))
}

/// Writes `graph_<id>.txt` per requested graph into `out`.
pub fn cmd_export_attention(
    checkpoint: &Path,
    graphs: &[usize],
    out: &Path,
    overrides: &[(String, String)],
) -> Result<Vec<PathBuf>, CliError> {
    let ck = read_checkpoint::<f64>(BufReader::new(File::open(checkpoint).map_err(io_err(checkpoint))?))?;
    let mut pairs = parse_pairs(&ck.config)?;
    merge_pairs(&mut pairs, overrides);
    let cfg = ExperimentConfig::from_pairs(&pairs)?;
    let bundle = cfg.load_dataset()?;
    let model_cfg = cfg.model_config(&bundle)?;
    let model = GraphiT::from_params(model_cfg.clone(), ck.params).map_err(|e| CliError::Mismatch(e.to_string()))?;
    let gckn = if matches!(model_cfg.structure, StructureEncoding::Gckn { .. }) {
        let p = checkpoint.with_file_name("gckn.json");
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        Some(NystromEmbedding::<f64>::from_json(&text).map_err(|e| CliError::Mismatch(format!("{}: {e}", p.display())))?)
    } else {
        None
    };
    let mut written = Vec::with_capacity(graphs.len());
    for &id in graphs {
        let g = bundle
            .graphs
            .get(id)
            .ok_or_else(|| CliError::Index(format!("graph index {id} out of range, {} has {} graphs", bundle.name, bundle.len())))?;
        let inputs = GraphInputs::prepare(g, &model_cfg, gckn.as_ref())?;
        let maps = model.export_attention(&inputs)?;
        let path = out.join(format!("graph_{id}.txt"));
        let mut w = create(&path)?;
        write_attention(&mut w, id, &maps).and_then(|_| w.flush()).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Grid of comma-separated values per key.
pub fn parse_grid(text: &str) -> Result<BTreeMap<String, Vec<String>>, CliError> {
    let mut grid = BTreeMap::new();
    for (k, v) in parse_pairs(text)? {
        let k = normalize_key(&k);
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey { key: k }.into());
        }
        let vals: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if vals.is_empty() {
            return Err(ConfigError::Value { key: k, reason: "no values".into() }.into());
        }
        if grid.insert(k.clone(), vals).is_some() {
            return Err(ConfigError::Duplicate { key: k }.into());
        }
    }
    Ok(grid)
}

/// Cartesian product of the grid values, keys in sorted order.
pub fn expand(grid: &BTreeMap<String, Vec<String>>) -> Vec<Vec<(String, String)>> {
    let mut out = vec![Vec::new()];
    for (k, vals) in grid {
        out = out
            .into_iter()
            .flat_map(|base| {
                vals.iter().map(move |v| {
                    let mut b = base.clone();
                    b.push((k.clone(), v.clone()));
                    b
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub structure: String,
    pub kernel: String,
    pub splits: Vec<SplitReport>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub dataset: String,
    pub metric: Metric,
    pub cells: Vec<CellReport>,
    pub table: String,
    /// Runs trained in this invocation and runs reused from disk.
    pub trained: usize,
    pub resumed: usize,
}

/// Runs every grid point on every split, selects per split and table cell,
/// retrains each winner on train+val and aggregates over splits.
///
/// Table rows are `structure_encoding` values and columns kernel labels;
/// every other multi-valued key is a selection axis. Without a `split` key
/// all splits of the dataset are used.
pub fn cmd_sweep(grid_text: &str, overrides: &[(String, String)], workers: Option<usize>) -> Result<SweepReport, CliError> {
    let mut grid = parse_grid(grid_text)?;
    for (k, v) in overrides {
        grid.insert(normalize_key(k), vec![v.clone()]);
    }
    if grid.get("dataset").is_none_or(|d| d.len() != 1) {
        return Err(ConfigError::Value { key: "dataset".into(), reason: "a sweep needs exactly one dataset".into() }.into());
    }
    if grid.get("fit_on").is_some_and(|f| f.iter().any(|v| v != "train")) {
        return Err(ConfigError::Value { key: "fit_on".into(), reason: "sweeps fit on train and retrain on train+val".into() }.into());
    }
    grid.remove("fit_on");
    let probe = ExperimentConfig::from_pairs(&expand(&grid)[0])?;
    let bundle = probe.load_dataset()?;
    if !grid.contains_key("split") {
        let n = plan_for(&bundle, probe.split_seed)?.splits.len();
        grid.insert("split".into(), (0..n).map(|s| s.to_string()).collect());
    }

    let mut configs: Vec<ExperimentConfig> = Vec::new();
    for pairs in expand(&grid) {
        let mut c = ExperimentConfig::from_pairs(&pairs)?;
        if c.kernel != KernelChoice::Prw {
            // p only matters for the random-walk kernel
            c.p = ExperimentConfig::defaults(&c.dataset).p;
        }
        if !configs.iter().any(|o| o.hash() == c.hash()) {
            configs.push(c);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let resumed = AtomicUsize::new(0);
    let run = |c: &ExperimentConfig| -> Result<TrainResult, CliError> {
        let r = run_or_resume(c, &bundle)?;
        if r.resumed {
            resumed.fetch_add(1, Ordering::Relaxed);
        }
        Ok(r)
    };
    let first: Vec<TrainResult> = pool.install(|| configs.par_iter().map(run).collect::<Result<_, _>>())?;

    type Group<'a> = Vec<(&'a ExperimentConfig, RunRecord)>;
    let mut groups: BTreeMap<(String, String, usize), Group> = BTreeMap::new();
    for (c, r) in configs.iter().zip(first) {
        groups.entry((c.structure_encoding.name().to_string(), c.kernel_label(), c.split)).or_default().push((c, r.record));
    }
    let winners: Vec<((String, String, usize), ExperimentConfig, RunRecord)> = groups
        .iter()
        .map(|(key, runs)| {
            let records: Vec<RunRecord> = runs.iter().map(|(_, r)| r.clone()).collect();
            let best = select(&records)?;
            let (cfg, rec) = runs.iter().find(|(_, r)| r.config_hash == best.config_hash).expect("selected run is in its group");
            let mut retrain = (*cfg).clone();
            retrain.fit_on = FitOn::TrainVal;
            Ok((key.clone(), retrain, rec.clone()))
        })
        .collect::<Result<_, CliError>>()?;
    let retrained: Vec<TrainResult> = pool.install(|| winners.par_iter().map(|(_, c, _)| run(c)).collect::<Result<_, _>>())?;

    let mut cells: BTreeMap<(String, String), Vec<SplitReport>> = BTreeMap::new();
    for ((key, _, sel), re) in winners.iter().zip(&retrained) {
        cells.entry((key.0.clone(), key.1.clone())).or_default().push(SplitReport {
            selected: sel.config_hash.clone(),
            selection_score: sel.selection_score(),
            test_metric: re.record.test_estimate(),
        });
    }
    let metric = retrained.first().map_or(Metric::Accuracy, |r| r.record.metric);
    let cells: Vec<CellReport> = cells
        .into_iter()
        .map(|((structure, kernel), splits)| {
            let tests: Vec<f64> = splits.iter().map(|s| s.test_metric).collect();
            let (mean, std) = aggregate(&tests).expect("at least one split");
            CellReport { structure, kernel, splits, mean, std }
        })
        .collect();
    let table = render_table(&probe.dataset, metric, &cells, configs.len());
    let grid_id = ExperimentConfig::hash_text(&format!("{grid:?}"));
    write_file(&probe.results_root().join(&probe.dataset).join(format!("sweep_{grid_id}.txt")), &table)?;
    let resumed = resumed.into_inner();
    Ok(SweepReport { dataset: probe.dataset.clone(), metric, cells, table, trained: configs.len() + retrained.len() - resumed, resumed })
}

/// Rows are structure encodings, columns kernels; accuracies in percent.
pub fn render_table(dataset: &str, metric: Metric, cells: &[CellReport], runs: usize) -> String {
    let mut rows: Vec<&str> = Vec::new();
    let mut cols: Vec<&str> = Vec::new();
    for c in cells {
        if !rows.contains(&c.structure.as_str()) {
            rows.push(&c.structure);
        }
        if !cols.contains(&c.kernel.as_str()) {
            cols.push(&c.kernel);
        }
    }
    // the published table order; unknown labels keep their relative order at the end
    let row_rank = |s: &str| ["none", "lappe", "gckn"].iter().position(|&r| r == s).unwrap_or(usize::MAX);
    let col_rank = |s: &str| match s {
        "none" => (0, 0),
        "allones" => (1, 0),
        "adj" => (2, 0),
        "diffusion" => (4, 0),
        _ => s.strip_suffix("-step RW").and_then(|p| p.parse().ok()).map_or((5, 0), |p| (3, p)),
    };
    rows.sort_by_key(|s| row_rank(s));
    cols.sort_by_key(|s| col_rank(s));
    let fmt = |c: &CellReport| match metric {
        Metric::Accuracy => format!("{:.1} ± {:.1}", 100.0 * c.mean, 100.0 * c.std),
        Metric::Mae => format!("{:.3} ± {:.3}", c.mean, c.std),
    };
    let splits = cells.first().map_or(0, |c| c.splits.len());
    let mut out = format!("# dataset={dataset} metric={} splits={splits} runs={runs}\n", metric.name());
    let mut header = vec!["structure \\ kernel".to_string()];
    header.extend(cols.iter().map(|c| c.to_string()));
    let mut table = vec![header];
    for r in &rows {
        let mut line = vec![r.to_string()];
        for c in &cols {
            line.push(cells.iter().find(|x| x.structure == *r && x.kernel == *c).map_or_else(|| "-".into(), fmt));
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|l| l[j].chars().count()).max().unwrap_or(0)).collect();
    for line in table {
        let padded: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(padded.join(" | ").trim_end());
        out.push('\n');
    }
    out
}
