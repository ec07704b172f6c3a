//! Command-line front end: `gen`, `train`, `eval`, `predict`, `export`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::circuit::{CircuitError, Dataset, Example, GridMap, SynthSpec};
use crate::mapfile::{read_map, write_csv, write_map, write_png, MapError};
use crate::models::Stage;
use crate::trainer::{evaluate, load_checkpoint, save_checkpoint, TrainConfig, TrainError, Trainer, UpdateScheme};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "vaca", version, about = "Routing congestion prediction with label-correlation regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Print grid- and cell-level metrics of a checkpoint on a split.
    Eval(EvalArgs),
    /// Predict the congestion map of one design.
    Predict(PredictArgs),
    /// Render a map file as PNG and/or CSV.
    Export(ExportArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 28)]
    pub designs: usize,
    /// Grid size as ROWSxCOLS.
    #[arg(long, default_value = "16x16")]
    pub grid: String,
    #[arg(long, default_value_t = 60)]
    pub cells: usize,
    #[arg(long, default_value_t = 90)]
    pub nets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Neighborhood radius recorded with each design.
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Placement,
    Logic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UpdateArg {
    Alternating,
    Fused,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub update: Option<UpdateArg>,
    /// Continue from OUT/model.ckpt; `--epochs` may raise the epoch budget.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// One design directory of a dataset.
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Record of one `train` run, written at the end.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: TrainConfig,
    pub seed: u64,
    pub git_describe: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

/// Parses `ROWSxCOLS`, both positive.
pub fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("grid must be ROWSxCOLS with positive sizes, got {s:?}"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let rows: usize = r.trim().parse().map_err(|_| bad())?;
    let cols: usize = c.trim().parse().map_err(|_| bad())?;
    if rows == 0 || cols == 0 {
        return Err(bad());
    }
    Ok((rows, cols))
}

/// Applies `VACA_THREADS` to the worker pool, if set.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("VACA_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("VACA_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn git_describe() -> String {
    Process::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

pub fn run(cli: Cli, out: &mut impl Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => gen(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Export(a) => export(a, out),
    }
}

fn gen(a: GenArgs, out: &mut impl Write) -> Result<(), CliError> {
    let (rows, cols) = parse_grid(&a.grid)?;
    if a.designs == 0 {
        return Err(CliError::Usage("--designs must be positive".into()));
    }
    let spec = SynthSpec {
        rows,
        cols,
        cells: a.cells,
        nets: a.nets,
        a: a.radius,
        ..SynthSpec::default()
    };
    let ds = Dataset::synthetic(a.designs, &spec, a.seed)?;
    ds.save(&a.out)?;
    writeln!(
        out,
        "wrote {} designs to {} (train {}, val {}, test {})",
        ds.examples.len(),
        a.out.display(),
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len()
    )?;
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Placement => Stage::Placement,
            ModeArg::Logic => Stage::LogicSynthesis,
        };
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lambda {
        cfg.loss.lambda = v;
    }
    if let Some(v) = a.tau {
        cfg.loss.tau = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(u) = a.update {
        cfg.update = match u {
            UpdateArg::Alternating => UpdateScheme::Alternating,
            UpdateArg::Fused => UpdateScheme::Fused,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs, out: &mut impl Write) -> Result<(), CliError> {
    let started = now();
    let ds = Dataset::load(&a.data)?;
    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("model.ckpt");
    let log_path = a.out.join("train_log.jsonl");

    let (trainer, mut state) = if a.resume {
        let mut state = load_checkpoint(&ckpt)?;
        if let Some(e) = a.epochs {
            state.config.epochs = e;
        }
        let trainer = Trainer::new(&ds, state.config.clone(), Some(state.model.config.clone()))?;
        (trainer, state)
    } else {
        let trainer = Trainer::new(&ds, train_config(&a)?, None)?;
        let state = trainer.init_state();
        (trainer, state)
    };
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume)
        .truncate(!a.resume)
        .open(&log_path)?;
    while !state.finished() {
        let line = serde_json::to_string(&trainer.run_epoch(&mut state)?)?;
        writeln!(log, "{line}")?;
        writeln!(out, "{line}")?;
        save_checkpoint(&state, &ckpt)?;
    }
    if !ckpt.exists() {
        save_checkpoint(&state, &ckpt)?;
    }

    let manifest = RunManifest {
        command: std::env::args().collect(),
        config: state.config.clone(),
        seed: state.config.seed,
        git_describe: git_describe(),
        started,
        finished: now(),
        outputs: vec![ckpt, log_path],
    };
    write_atomic(&a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    split: &'a str,
    #[serde(flatten)]
    record: crate::trainer::EvalRecord,
}

fn eval(a: EvalArgs, out: &mut impl Write) -> Result<(), CliError> {
    let state = load_checkpoint(&a.ckpt)?;
    let ds = Dataset::load(&a.data)?;
    let examples = ds
        .split_examples(&a.split)
        .ok_or_else(|| CliError::Usage(format!("unknown split {:?}; use train, val or test", a.split)))?;
    if examples.is_empty() {
        return Err(CliError::Usage(format!("split {:?} is empty", a.split)));
    }
    let record = evaluate(&state.model, &examples)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&EvalOutput { split: &a.split, record })?)?;
    Ok(())
}

fn predict(a: PredictArgs, out: &mut impl Write) -> Result<(), CliError> {
    let state = load_checkpoint(&a.ckpt)?;
    let example = Example::load(&a.design)?;
    let pred = state.model.predict_map(&example).map_err(TrainError::from)?;
    let map = GridMap {
        rows: pred.rows,
        cols: pred.cols,
        values: pred.values,
    };
    write_map(&a.out, &map)?;
    writeln!(out, "wrote {}x{} map to {}", map.rows, map.cols, a.out.display())?;
    Ok(())
}

fn export(a: ExportArgs, out: &mut impl Write) -> Result<(), CliError> {
    if a.png.is_none() && a.csv.is_none() {
        return Err(CliError::Usage("export needs --png and/or --csv".into()));
    }
    let map = read_map(&a.map)?;
    if let Some(p) = &a.png {
        write_png(p, &map)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    if let Some(p) = &a.csv {
        write_csv(p, &map)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}
