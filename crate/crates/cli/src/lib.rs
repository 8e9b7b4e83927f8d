//! Command-line front end: kernel dumps, training runs, grid sweeps, split
//! plans and attention export.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::CliError;
use config::{normalize_key, KEYS};

const AFTER_HELP: &str = "Any configuration key can be given as `--key value` (or `--key=value`), \
overriding the config file. Results go to `results/<dataset>/<config-hash>/` under \
$GRAPHIT_RESULTS (default `results`) unless `output_dir` is set.";

#[derive(Debug, Parser)]
#[command(name = "graphit", version, about = "Graph transformers with kernel-modulated attention", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump one graph's kernel matrix and report its extreme eigenvalues.
    Kernel {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        graph: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one configuration on one split.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run or resume a grid, select per split and print the result table.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write per-layer, head-averaged attention maps of a trained model.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated graph indices.
        #[arg(long, value_delimiter = ',', required = true)]
        graphs: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the dataset's split plan as plain index lists.
    PrepareSplits {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `(key, value)` configuration pairs.
pub type Overrides = Vec<(String, String)>;

/// Separates `--key value` configuration overrides from the command's own
/// arguments.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        let key = normalize_key(&name);
        if !KEYS.contains(&key.as_str()) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| CliError::Usage(format!("flag --{name} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Runs the command line and returns what should be printed on success.
pub fn run(args: Vec<String>) -> Result<String, CliError> {
    let (rest, overrides) = split_overrides(args)?;
    let cli = Cli::try_parse_from(rest).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Usage(e.to_string()),
        _ => CliError::Usage(e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string()),
    })?;
    match cli.command {
        Command::Kernel { config, graph, out } => {
            let cfg = commands::load_config(config.as_deref(), &overrides)?;
            commands::cmd_kernel(&cfg, graph, out.as_deref())
        }
        Command::Train { config } => {
            let cfg = commands::load_config(config.as_deref(), &overrides)?;
            let r = commands::cmd_train(&cfg)?;
            Ok(format!("{}\nresults={}", r.summary, r.dir.display()))
        }
        Command::Sweep { grid, workers } => {
            let text = std::fs::read_to_string(&grid).map_err(|source| CliError::Io { path: grid.clone(), source })?;
            let r = commands::cmd_sweep(&text, &overrides, workers)?;
            Ok(format!("{}# trained={} resumed={}", r.table, r.trained, r.resumed))
        }
        Command::ExportAttention { checkpoint, graphs, out } => {
            let files = commands::cmd_export_attention(&checkpoint, &graphs, &out, &overrides)?;
            Ok(files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))
        }
        Command::PrepareSplits { config, out } => {
            let cfg = commands::load_config(config.as_deref(), &overrides)?;
            commands::cmd_prepare_splits(&cfg, out.as_deref())
        }
    }
}
