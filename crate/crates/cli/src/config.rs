//! Flat `key = value` experiment configurations.
//!
//! Every key has a default (some depend on the dataset), so the canonical
//! text of a configuration lists all of them in sorted order. The config hash
//! is computed from that text with the location keys left out, which makes it
//! independent of where data and results live.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graphit::autodiff::LrSchedule;
use graphit::data::{load_tu, load_zinc, plan_for, DataError, DatasetBundle, Split, TaskKind};
use graphit::model::{ModelConfig, NegativeKernel, Pooling, StructureEncoding, Task};
use graphit::training::{FitOn, TrainConfig};
use graphit::{KernelFamily, KernelSpec};
use sha2::{Digest, Sha256};

/// Keys excluded from the config hash.
pub const LOCATION_KEYS: [&str; 2] = ["dataset_path", "output_dir"];

pub const KEYS: [&str; 31] = [
    "batch_size",
    "beta",
    "d_model",
    "dataset",
    "dataset_path",
    "degree_scaling",
    "dropout",
    "epochs",
    "fit_on",
    "gamma",
    "gckn_filters",
    "gckn_path_size",
    "gckn_sigma",
    "heads",
    "kernel",
    "lappe_k",
    "layers",
    "lr",
    "negative_kernel",
    "output_dir",
    "p",
    "pooling",
    "precision",
    "schedule",
    "seed",
    "split",
    "split_seed",
    "structure_encoding",
    "train_subsample",
    "weight_decay",
    "zero_diagonal",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("key `{key}` given twice")]
    Duplicate { key: String },
    #[error("`{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn value_err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelChoice {
    None,
    Diffusion,
    Prw,
    Adjacency,
    AllOnes,
}

impl KernelChoice {
    pub fn name(self) -> &'static str {
        match self {
            KernelChoice::None => "none",
            KernelChoice::Diffusion => "diffusion",
            KernelChoice::Prw => "prw",
            KernelChoice::Adjacency => "adj",
            KernelChoice::AllOnes => "allones",
        }
    }
}

impl FromStr for KernelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(KernelChoice::None),
            "diffusion" => Ok(KernelChoice::Diffusion),
            "prw" => Ok(KernelChoice::Prw),
            "adj" | "adjacency" => Ok(KernelChoice::Adjacency),
            "allones" => Ok(KernelChoice::AllOnes),
            _ => Err(format!("unknown kernel `{s}` (expected none, diffusion, prw, adj or allones)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureChoice {
    None,
    LapPe,
    Gckn,
}

impl StructureChoice {
    pub fn name(self) -> &'static str {
        match self {
            StructureChoice::None => "none",
            StructureChoice::LapPe => "lappe",
            StructureChoice::Gckn => "gckn",
        }
    }
}

impl FromStr for StructureChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(StructureChoice::None),
            "lappe" => Ok(StructureChoice::LapPe),
            "gckn" => Ok(StructureChoice::Gckn),
            _ => Err(format!("unknown structure encoding `{s}` (expected none, lappe or gckn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub dataset_path: Option<PathBuf>,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub pooling: Pooling,
    pub kernel: KernelChoice,
    pub beta: f64,
    pub p: u32,
    pub gamma: f64,
    pub zero_diagonal: bool,
    /// `None` follows the model default: on exactly when a kernel is set.
    pub degree_scaling: Option<bool>,
    pub structure_encoding: StructureChoice,
    pub lappe_k: usize,
    pub gckn_path_size: usize,
    pub gckn_filters: usize,
    pub gckn_sigma: f64,
    pub negative_kernel: NegativeKernel,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub split: usize,
    /// Seed of the ten random splits; shared by every run on a dataset.
    pub split_seed: u64,
    pub fit_on: FitOn,
    pub precision: Precision,
    pub train_subsample: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

pub fn is_zinc(dataset: &str) -> bool {
    dataset.eq_ignore_ascii_case("zinc")
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Values are
/// kept verbatim (minus surrounding whitespace).
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Accepts both `d_model` and `d-model`.
pub fn normalize_key(k: &str) -> String {
    k.replace('-', "_")
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| value_err(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(value_err(key, format!("expected true or false, found `{v}`"))),
    }
}

impl ExperimentConfig {
    /// Defaults for a dataset: the classification protocol for TU datasets,
    /// the regression protocol (10 layers, 8 heads, warmup) for ZINC.
    pub fn defaults(dataset: &str) -> Self {
        let zinc = is_zinc(dataset);
        Self {
            dataset: dataset.to_string(),
            dataset_path: None,
            layers: if zinc { 10 } else { 3 },
            heads: if zinc { 8 } else { 4 },
            d_model: 64,
            pooling: Pooling::Mean,
            kernel: KernelChoice::None,
            beta: 1.0,
            p: 2,
            gamma: 0.5,
            zero_diagonal: false,
            degree_scaling: None,
            structure_encoding: StructureChoice::None,
            lappe_k: if zinc { 8 } else { 2 },
            gckn_path_size: if zinc { 8 } else { 5 },
            gckn_filters: graphit::gckn::DEFAULT_FILTERS,
            gckn_sigma: graphit::gckn::DEFAULT_SIGMA,
            negative_kernel: NegativeKernel::Clamp,
            dropout: 0.0,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: if zinc { 128 } else { 32 },
            epochs: if zinc { 500 } else { 300 },
            schedule: if zinc { LrSchedule::Warmup } else { LrSchedule::Halving },
            seed: 0,
            split: 0,
            split_seed: 0,
            fit_on: FitOn::Train,
            precision: Precision::F64,
            train_subsample: None,
            output_dir: None,
        }
    }

    /// Builds a configuration from pairs; `dataset` is required. Unknown and
    /// repeated keys are rejected.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut seen = BTreeMap::new();
        for (k, v) in pairs {
            let k = normalize_key(k);
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey { key: k });
            }
            if seen.insert(k.clone(), v.clone()).is_some() {
                return Err(ConfigError::Duplicate { key: k });
            }
        }
        let dataset = seen.get("dataset").ok_or_else(|| value_err("dataset", "missing"))?;
        if dataset.is_empty() || dataset.contains(['/', '\\']) {
            return Err(value_err("dataset", format!("`{dataset}` is not a dataset name")));
        }
        let mut cfg = Self::defaults(dataset);
        for (k, v) in &seen {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_text(&text)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "dataset" => {
                if v != self.dataset {
                    return Err(value_err(key, "cannot change the dataset after defaults were chosen"));
                }
            }
            "dataset_path" => self.dataset_path = (v != "default").then(|| PathBuf::from(v)),
            "layers" => self.layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "pooling" => self.pooling = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "zero_diagonal" => self.zero_diagonal = parse_bool(key, v)?,
            "degree_scaling" => self.degree_scaling = if v == "auto" { None } else { Some(parse_bool(key, v)?) },
            "structure_encoding" => self.structure_encoding = parse(key, v)?,
            "lappe_k" => self.lappe_k = parse(key, v)?,
            "gckn_path_size" => self.gckn_path_size = parse(key, v)?,
            "gckn_filters" => self.gckn_filters = parse(key, v)?,
            "gckn_sigma" => self.gckn_sigma = parse(key, v)?,
            "negative_kernel" => {
                self.negative_kernel = match v {
                    "clamp" => NegativeKernel::Clamp,
                    "reject" => NegativeKernel::Reject,
                    _ => return Err(value_err(key, format!("expected clamp or reject, found `{v}`"))),
                }
            }
            "dropout" => self.dropout = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "schedule" => self.schedule = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "split" => self.split = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            "fit_on" => self.fit_on = parse(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(value_err(key, format!("expected f32 or f64, found `{v}`"))),
                }
            }
            "train_subsample" => {
                self.train_subsample = match v {
                    "none" | "0" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "output_dir" => self.output_dir = (v != "default").then(|| PathBuf::from(v)),
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Checks every setting that does not need the dataset.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("lappe_k", self.lappe_k),
            ("gckn_path_size", self.gckn_path_size),
            ("gckn_filters", self.gckn_filters),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(value_err(k, "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(value_err("d_model", format!("{} is not a multiple of heads = {}", self.d_model, self.heads)));
        }
        let finite_pos = [("beta", self.beta), ("gckn_sigma", self.gckn_sigma), ("lr", self.lr)];
        for (k, v) in finite_pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(value_err(k, format!("must be positive, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(value_err("gamma", format!("must be in (0, 1], got {}", self.gamma)));
        }
        if self.p == 0 {
            return Err(value_err("p", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(value_err("dropout", format!("must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(value_err("weight_decay", format!("must be non-negative, got {}", self.weight_decay)));
        }
        if self.train_subsample == Some(0) {
            return Err(value_err("train_subsample", "must be positive"));
        }
        Ok(())
    }

    /// `(key, canonical value)` for every key, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "default".to_string(), |p| p.display().to_string());
        let v: Vec<String> = vec![
            self.batch_size.to_string(),
            self.beta.to_string(),
            self.d_model.to_string(),
            self.dataset.clone(),
            path(&self.dataset_path),
            self.degree_scaling.map_or_else(|| "auto".to_string(), |b| b.to_string()),
            self.dropout.to_string(),
            self.epochs.to_string(),
            self.fit_on.to_string(),
            self.gamma.to_string(),
            self.gckn_filters.to_string(),
            self.gckn_path_size.to_string(),
            self.gckn_sigma.to_string(),
            self.heads.to_string(),
            self.kernel.name().to_string(),
            self.lappe_k.to_string(),
            self.layers.to_string(),
            self.lr.to_string(),
            match self.negative_kernel {
                NegativeKernel::Clamp => "clamp",
                NegativeKernel::Reject => "reject",
            }
            .to_string(),
            path(&self.output_dir),
            self.p.to_string(),
            self.pooling.to_string(),
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .to_string(),
            self.schedule.to_string(),
            self.seed.to_string(),
            self.split.to_string(),
            self.split_seed.to_string(),
            self.structure_encoding.name().to_string(),
            self.train_subsample.map_or_else(|| "none".to_string(), |s| s.to_string()),
            self.weight_decay.to_string(),
            self.zero_diagonal.to_string(),
        ];
        KEYS.into_iter().zip(v).collect()
    }

    /// One `key = value` line per key, sorted.
    pub fn canonical_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text without
    /// the location keys.
    pub fn hash(&self) -> String {
        let text: String =
            self.entries().into_iter().filter(|(k, _)| !LOCATION_KEYS.contains(k)).map(|(k, v)| format!("{k} = {v}\n")).collect();
        Self::hash_text(&text)
    }

    /// First 16 hex digits of the SHA-256 of `text`.
    pub fn hash_text(text: &str) -> String {
        Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn kernel_spec(&self) -> Option<KernelSpec> {
        let family = match self.kernel {
            KernelChoice::None => return None,
            KernelChoice::Diffusion => KernelFamily::Diffusion { beta: self.beta },
            KernelChoice::Prw => KernelFamily::PStepRw { p: self.p, gamma: self.gamma },
            KernelChoice::Adjacency => KernelFamily::Adjacency,
            KernelChoice::AllOnes => KernelFamily::AllOnes,
        };
        Some(KernelSpec { family, zero_diagonal: self.zero_diagonal })
    }

    pub fn structure(&self) -> StructureEncoding {
        match self.structure_encoding {
            StructureChoice::None => StructureEncoding::None,
            StructureChoice::LapPe => StructureEncoding::LapPe { k: self.lappe_k },
            StructureChoice::Gckn => {
                StructureEncoding::Gckn { path_size: self.gckn_path_size, filters: self.gckn_filters, sigma: self.gckn_sigma }
            }
        }
    }

    /// Column label of result tables.
    pub fn kernel_label(&self) -> String {
        match self.kernel {
            KernelChoice::Prw => format!("{}-step RW", self.p),
            k => k.name().to_string(),
        }
    }

    pub fn model_config(&self, bundle: &DatasetBundle) -> Result<ModelConfig, ConfigError> {
        let task = match bundle.task {
            TaskKind::Classification { classes } => Task::Classify { classes },
            TaskKind::Regression => Task::Regress,
        };
        let mut m = ModelConfig::new(self.layers, self.heads, self.d_model, self.kernel_spec(), task, bundle.vocab);
        m.pooling = self.pooling;
        m.structure = self.structure();
        if let Some(d) = self.degree_scaling {
            m.degree_scaling = d;
        }
        m.negative_kernel = self.negative_kernel;
        m.dropout = self.dropout;
        m.validate().map_err(|e| value_err("model", e))?;
        Ok(m)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            schedule: self.schedule,
            seed: self.seed,
            fit_on: self.fit_on,
            train_subsample: self.train_subsample,
        }
    }

    /// `dataset_path`, else `$GRAPHIT_DATA/<dataset>`, else `data/<dataset>`.
    pub fn data_dir(&self) -> PathBuf {
        self.dataset_path.clone().unwrap_or_else(|| {
            let root = std::env::var_os("GRAPHIT_DATA").map_or_else(|| PathBuf::from("data"), PathBuf::from);
            root.join(&self.dataset)
        })
    }

    pub fn load_dataset(&self) -> Result<DatasetBundle, DataError> {
        let dir = self.data_dir();
        if is_zinc(&self.dataset) {
            load_zinc(&dir)
        } else {
            load_tu(&dir, &self.dataset)
        }
    }

    /// The configured split of the dataset's plan.
    pub fn split_of(&self, bundle: &DatasetBundle) -> Result<Split, ConfigError> {
        let plan = plan_for(bundle, self.split_seed).map_err(|e| value_err("split", e.to_string()))?;
        let n = plan.splits.len();
        plan.splits
            .into_iter()
            .nth(self.split)
            .ok_or_else(|| value_err("split", format!("index {} out of range, dataset has {n} split(s)", self.split)))
    }

    /// `output_dir`, else `$GRAPHIT_RESULTS`, else `results`.
    pub fn results_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| std::env::var_os("GRAPHIT_RESULTS").map_or_else(|| PathBuf::from("results"), PathBuf::from))
    }

    /// `<results root>/<dataset>/<hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.results_root().join(&self.dataset).join(self.hash())
    }
}
