//! Dataset loading: TU text format, a plain-text ZINC container, and split
//! plans.
//!
//! TU node ids are 1-indexed on disk and 0-indexed in memory; the conversion
//! happens only in [`load_tu`] and [`write_tu`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Graph, GraphError, Target};

pub const NUM_SPLITS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: edge ({u}, {v}) crosses graphs {gu} and {gv}")]
    CrossingEdge { path: PathBuf, line: usize, u: usize, v: usize, gu: usize, gv: usize },
    #[error("graph {0} has no nodes")]
    EmptyGraph(usize),
    #[error("{what}: expected {expected} entries, found {got}")]
    Count { what: String, expected: usize, got: usize },
    #[error("graph {index}: {source}")]
    Graph { index: usize, source: GraphError },
    #[error("split index {index} out of range for {n} graphs ({file})")]
    SplitIndex { file: String, index: usize, n: usize },
    #[error("need at least {NUM_SPLITS} graphs to split, got {0}")]
    TooSmall(usize),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification { classes: usize },
    Regression,
}

/// One train/val/test partition of graph indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// True when the three parts are disjoint and cover `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Node label vocabulary size.
    pub vocab: usize,
    pub task: TaskKind,
    /// Original node label of each dense id (TU only; identity for ZINC).
    pub node_label_values: Vec<i64>,
    /// Original graph label of each class id (classification only).
    pub class_values: Vec<i64>,
    /// Fixed benchmark split, when the dataset ships one.
    pub fixed_split: Option<Split>,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::n).max().unwrap_or(0)
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.task {
            TaskKind::Classification { classes } => Some(classes),
            TaskKind::Regression => None,
        }
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Non-empty lines with their 1-based line numbers, tokens split on commas
/// and whitespace.
fn token_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let toks: Vec<&str> = l.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn parse_int(path: &Path, line: usize, tok: &str) -> Result<i64, DataError> {
    tok.parse().map_err(|_| DataError::Parse { path: path.to_path_buf(), line, reason: format!("not an integer: `{tok}`") })
}

fn single_ints(path: &Path) -> Result<Vec<i64>, DataError> {
    token_lines(&read(path)?)
        .map(|(line, toks)| {
            if toks.len() != 1 {
                return Err(DataError::Parse { path: path.to_path_buf(), line, reason: format!("expected one value, got {}", toks.len()) });
            }
            parse_int(path, line, toks[0])
        })
        .collect()
}

/// Dense ids in sorted order of the distinct values.
fn dense_ids(values: &[i64]) -> (Vec<usize>, Vec<i64>) {
    let distinct: Vec<i64> = values.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let map: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (values.iter().map(|v| map[v]).collect(), distinct)
}

/// Loads `dir/NAME_{A,graph_indicator,graph_labels,node_labels}.txt`.
///
/// Directed duplicate edges are merged, self-loops are dropped, node and
/// graph labels are remapped to dense ids in sorted order of their original
/// values (kept in the bundle so [`write_tu`] reproduces the input).
pub fn load_tu(dir: &Path, name: &str) -> Result<DatasetBundle, DataError> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let ind_path = file("graph_indicator");
    let indicator = single_ints(&ind_path)?;
    let graph_labels = single_ints(&file("graph_labels"))?;
    let node_labels = single_ints(&file("node_labels"))?;
    let num_graphs = graph_labels.len();
    if node_labels.len() != indicator.len() {
        return Err(DataError::Count { what: format!("{name}_node_labels"), expected: indicator.len(), got: node_labels.len() });
    }
    // global node -> (graph, local index)
    let mut sizes = vec![0usize; num_graphs];
    let mut local = Vec::with_capacity(indicator.len());
    for (i, &g) in indicator.iter().enumerate() {
        if g < 1 || g as usize > num_graphs {
            return Err(DataError::Parse { path: ind_path.clone(), line: i + 1, reason: format!("graph id {g} outside 1..={num_graphs}") });
        }
        let g = g as usize - 1;
        local.push((g, sizes[g]));
        sizes[g] += 1;
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(DataError::EmptyGraph(g));
    }
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let a_path = file("A");
    for (line, toks) in token_lines(&read(&a_path)?) {
        if toks.len() != 2 {
            return Err(DataError::Parse {
                path: a_path.clone(),
                line,
                reason: format!("expected a node pair, got {} values", toks.len()),
            });
        }
        let mut ends = [0usize; 2];
        for (e, t) in ends.iter_mut().zip(&toks) {
            let v = parse_int(&a_path, line, t)?;
            if v < 1 || v as usize > local.len() {
                return Err(DataError::Parse { path: a_path.clone(), line, reason: format!("node {v} outside 1..={}", local.len()) });
            }
            *e = v as usize - 1;
        }
        let ((gu, u), (gv, v)) = (local[ends[0]], local[ends[1]]);
        if gu != gv {
            return Err(DataError::CrossingEdge { path: a_path, line, u: ends[0] + 1, v: ends[1] + 1, gu: gu + 1, gv: gv + 1 });
        }
        if u != v {
            edges[gu].push((u, v));
        }
    }
    let (node_ids, node_label_values) = dense_ids(&node_labels);
    let (class_ids, class_values) = dense_ids(&graph_labels);
    let mut labels: Vec<Vec<usize>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (i, &(g, _)) in local.iter().enumerate() {
        labels[g].push(node_ids[i]);
    }
    let graphs = edges
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(index, (e, l))| {
            Graph::new(sizes[index], e, l)
                .map(|g| g.with_target(Target::Class(class_ids[index])))
                .map_err(|source| DataError::Graph { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DatasetBundle {
        name: name.to_string(),
        graphs,
        vocab: node_label_values.len(),
        task: TaskKind::Classification { classes: class_values.len() },
        node_label_values,
        class_values,
        fixed_split: None,
    })
}

/// Writes a classification bundle back in TU format, each undirected edge
/// as both directed pairs.
pub fn write_tu(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let (mut a, mut ind, mut gl, mut nl) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 1;
    for (gi, g) in bundle.graphs.iter().enumerate() {
        for &(u, v) in g.edges() {
            let _ = writeln!(a, "{}, {}", u + offset, v + offset);
            let _ = writeln!(a, "{}, {}", v + offset, u + offset);
        }
        for &l in g.node_labels() {
            let _ = writeln!(ind, "{}", gi + 1);
            let _ = writeln!(nl, "{}", bundle.node_label_values[l]);
        }
        match g.target() {
            Some(Target::Class(c)) => {
                let _ = writeln!(gl, "{}", bundle.class_values[c]);
            }
            _ => return Err(DataError::Invalid(format!("graph {gi} has no class label; TU output needs one"))),
        }
        offset += g.n();
    }
    let name = &bundle.name;
    write(&dir.join(format!("{name}_A.txt")), &a)?;
    write(&dir.join(format!("{name}_graph_indicator.txt")), &ind)?;
    write(&dir.join(format!("{name}_graph_labels.txt")), &gl)?;
    write(&dir.join(format!("{name}_node_labels.txt")), &nl)
}

pub const ZINC_GRAPHS: &str = "ZINC_graphs.txt";
pub const ZINC_SPLITS: [&str; 3] = ["ZINC_train.index", "ZINC_val.index", "ZINC_test.index"];

fn parse_zinc_line(path: &Path, line: usize, text: &str) -> Result<Graph, DataError> {
    let err = |reason: String| DataError::Parse { path: path.to_path_buf(), line, reason };
    let parts: Vec<&str> = text.split('|').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(err(format!("expected `target | labels | edges`, got {} fields", parts.len())));
    }
    let target: f64 = parts[0].parse().map_err(|_| err(format!("bad target `{}`", parts[0])))?;
    let labels = parts[1]
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| err(format!("bad atom type `{t}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut edges = Vec::new();
    for tok in parts[2].split_whitespace() {
        // edge type after ':' is ignored
        let pair = tok.split(':').next().unwrap_or(tok);
        let (u, v) = pair.split_once('-').ok_or_else(|| err(format!("bad edge `{tok}`")))?;
        let u: usize = u.parse().map_err(|_| err(format!("bad edge `{tok}`")))?;
        let v: usize = v.parse().map_err(|_| err(format!("bad edge `{tok}`")))?;
        if u != v {
            edges.push((u, v));
        }
    }
    let n = labels.len();
    Graph::new(n, edges, labels).map(|g| g.with_target(Target::Regression(target))).map_err(|e| err(e.to_string()))
}

/// Loads the ZINC container: `ZINC_graphs.txt` with one graph per line,
/// `target | atom types | u-v[:bond] ...` (0-indexed nodes, `#` comments),
/// and three split files of 0-based graph indices, one per line.
pub fn load_zinc(dir: &Path) -> Result<DatasetBundle, DataError> {
    let gpath = dir.join(ZINC_GRAPHS);
    let text = read(&gpath)?;
    let mut graphs = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        graphs.push(parse_zinc_line(&gpath, i + 1, l)?);
    }
    let n = graphs.len();
    let mut parts = Vec::new();
    for f in ZINC_SPLITS {
        let p = dir.join(f);
        let idx = single_ints(&p)?;
        let idx = idx
            .into_iter()
            .map(|i| {
                if i < 0 || i as usize >= n {
                    Err(DataError::SplitIndex { file: f.to_string(), index: i.max(0) as usize, n })
                } else {
                    Ok(i as usize)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        parts.push(idx);
    }
    let test = parts.pop().unwrap_or_default();
    let val = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    let vocab = graphs.iter().flat_map(|g| g.node_labels().iter().copied()).max().map_or(0, |m| m + 1);
    Ok(DatasetBundle {
        name: "ZINC".into(),
        graphs,
        vocab,
        task: TaskKind::Regression,
        node_label_values: (0..vocab as i64).collect(),
        class_values: Vec::new(),
        fixed_split: Some(Split { train, val, test }),
    })
}

/// Writes a regression bundle with a fixed split as a ZINC container.
pub fn write_zinc(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    let split = bundle.fixed_split.as_ref().ok_or_else(|| DataError::Invalid("bundle has no fixed split".into()))?;
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut out = String::from("# target | atom types | edges\n");
    for (gi, g) in bundle.graphs.iter().enumerate() {
        let Some(Target::Regression(y)) = g.target() else {
            return Err(DataError::Invalid(format!("graph {gi} has no regression target")));
        };
        let labels: Vec<String> = g.node_labels().iter().map(usize::to_string).collect();
        let edges: Vec<String> = g.edges().iter().map(|(u, v)| format!("{u}-{v}")).collect();
        let _ = writeln!(out, "{y:?} | {} | {}", labels.join(" "), edges.join(" "));
    }
    write(&dir.join(ZINC_GRAPHS), &out)?;
    for (f, idx) in ZINC_SPLITS.iter().zip([&split.train, &split.val, &split.test]) {
        let text: String = idx.iter().map(|i| format!("{i}\n")).collect();
        write(&dir.join(f), &text)?;
    }
    Ok(())
}

/// Ten seeded random splits of sizes `n - 2·round(n/10)`, `round(n/10)`,
/// `round(n/10)`, or the bundle's fixed split when it has one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub dataset: String,
    pub seed: u64,
    pub n: usize,
    pub splits: Vec<Split>,
}

pub fn make_splits(n: usize, dataset: &str, seed: u64) -> Result<SplitPlan, DataError> {
    if n < NUM_SPLITS {
        return Err(DataError::TooSmall(n));
    }
    let tenth = (n as f64 / 10.0).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = (0..NUM_SPLITS)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test = idx.split_off(n - tenth);
            let val = idx.split_off(n - 2 * tenth);
            Split { train: idx, val, test }
        })
        .collect();
    Ok(SplitPlan { dataset: dataset.to_string(), seed, n, splits })
}

/// Splits for a bundle: its fixed split (as the only entry) or ten random ones.
pub fn plan_for(bundle: &DatasetBundle, seed: u64) -> Result<SplitPlan, DataError> {
    match &bundle.fixed_split {
        Some(s) => Ok(SplitPlan { dataset: bundle.name.clone(), seed, n: bundle.len(), splits: vec![s.clone()] }),
        None => make_splits(bundle.len(), &bundle.name, seed),
    }
}

impl SplitPlan {
    /// Plain-text form for audit: a header, then `split k` followed by
    /// `train`, `val` and `test` lines of space-separated indices.
    pub fn to_text(&self) -> String {
        let mut s = format!("# graphit-splits v1 dataset={} seed={} n={}\n", self.dataset, self.seed, self.n);
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        for (k, sp) in self.splits.iter().enumerate() {
            let _ = writeln!(s, "split {k}\ntrain {}\nval {}\ntest {}", join(&sp.train), join(&sp.val), join(&sp.test));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let bad = |line: usize, reason: &str| DataError::Parse { path: PathBuf::from("<splits>"), line, reason: reason.to_string() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty split file"))?;
        let fields: BTreeMap<&str, &str> =
            header.trim_start_matches("# graphit-splits v1").split_whitespace().filter_map(|kv| kv.split_once('=')).collect();
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(1, &format!("header lacks `{k}`")));
        let dataset = get("dataset")?.to_string();
        let seed = get("seed")?.parse().map_err(|_| bad(1, "bad seed"))?;
        let n = get("n")?.parse().map_err(|_| bad(1, "bad n"))?;
        let mut splits = Vec::new();
        let mut cur: Option<Split> = None;
        for (i, l) in lines {
            let (key, rest) = l.split_once(' ').unwrap_or((l, ""));
            let ids =
                || rest.split_whitespace().map(|t| t.parse::<usize>().map_err(|_| bad(i + 1, "bad index"))).collect::<Result<Vec<_>, _>>();
            match key {
                "split" => {
                    splits.extend(cur.take());
                    cur = Some(Split { train: vec![], val: vec![], test: vec![] });
                }
                "train" | "val" | "test" => {
                    let sp = cur.as_mut().ok_or_else(|| bad(i + 1, "indices before `split`"))?;
                    let v = ids()?;
                    match key {
                        "train" => sp.train = v,
                        "val" => sp.val = v,
                        _ => sp.test = v,
                    }
                }
                _ => return Err(bad(i + 1, &format!("unexpected `{key}`"))),
            }
        }
        splits.extend(cur);
        Ok(Self { dataset, seed, n, splits })
    }
}

/// One-hot node label matrices, `n × vocab` per graph.
pub fn one_hot<T: crate::Scalar>(bundle: &DatasetBundle) -> Vec<crate::DenseMatrix<T>> {
    bundle
        .graphs
        .iter()
        .map(|g| crate::model::one_hot(g.node_labels(), bundle.vocab).expect("labels are below the vocabulary by construction"))
        .collect()
}
