//! Command-line front end: `train`, `derain`, `rainmake`, `eval`, `synth-data`.
//!
//! Exit codes: 0 success, 1 usage error (bad flag, unknown config key,
//! missing input path; nothing is written), 2 runtime failure.
//!
//! Every output directory receives `effective-config.toml`, whose first
//! line records the tool version. `derain` is the exception: it writes
//! exactly two PNGs and stores the same snapshot in their text chunks.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{list_images, write_synth_dataset, DatasetLayout, SynthDataSpec, UnpairedSet};
use crate::engine::config::{apply_overrides, apply_toml, PRESETS};
use crate::engine::TOOL_VERSION;
use crate::engine::{
    derain_to_files, evaluate, evaluate_identity, rainmake, Checkpoint, StepLog, Trainer, TrainingConfig,
};
use crate::error::Error;
use crate::losses::LossTerm;
use crate::metrics::ColorMode;

pub const EFFECTIVE_CONFIG: &str = "effective-config.toml";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "derain-cyclegan", version, about = "Unsupervised single-image rain removal and rain synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on unpaired rainy / rain-free images.
    Train(TrainArgs),
    /// Remove rain from one PNG or every PNG in a directory.
    Derain(DerainArgs),
    /// Add rain to clean images, producing a paired dataset.
    Rainmake(RainmakeArgs),
    /// PSNR/SSIM on a paired test set.
    Eval(EvalArgs),
    /// Generate a procedural toy dataset with synthetic rain.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset root with `rain/` and `norain/`; repeat to concatenate roots.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Run directory: logs, checkpoints and the config snapshot.
    #[arg(long)]
    out: PathBuf,
    /// Base configuration (`toy` or `paper`).
    #[arg(long, default_value = "toy")]
    preset: String,
    /// TOML file overlaid on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss subset, e.g. `base`, `base+p+gmm`, `total`.
    #[arg(long)]
    losses: Option<String>,
    /// `key=value` override with a dotted key, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint (its stored config is used unchanged).
    #[arg(long, conflicts_with_all = ["config", "losses", "overrides"])]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DerainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    input: PathBuf,
    /// Directory for `<name>_derained.png` and `<name>_mask.png`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RainmakeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of clean PNGs.
    #[arg(long)]
    clean: PathBuf,
    /// Root of the paired dataset to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Trained checkpoint; omit to score the rainy inputs themselves.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Paired root with `rain/` and `norain/` holding matching file names.
    #[arg(long)]
    data: PathBuf,
    /// Directory for `metrics.csv` and the config snapshot.
    #[arg(long)]
    out: PathBuf,
    /// Score BT.601 luma instead of RGB.
    #[arg(long)]
    luma: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_per_domain: Option<usize>,
    #[arg(long)]
    test_pairs: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// TOML file overlaid on the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn require_exists(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("path does not exist: {}", path.display())))
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    require_exists(path)?;
    Ok(Checkpoint::load(path)?)
}

/// Run with explicit arguments (the first item is the program name).
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Derain(a) => derain(a),
        Command::Rainmake(a) => rainmake_cmd(a),
        Command::Eval(a) => eval(a),
        Command::SynthData(a) => synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn snapshot(body: &str) -> String {
    format!("# tool_version = \"{TOOL_VERSION}\"\n{body}")
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, Failure> {
    toml::to_string(value).map_err(|e| Failure::Runtime(Error::Config(e.to_string())))
}

fn write_snapshot(dir: &Path, body: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    let path = dir.join(EFFECTIVE_CONFIG);
    std::fs::write(&path, snapshot(body)).map_err(|e| Error::Io { path, source: e })?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    require_exists(path)?;
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Preset, then config file, then `--losses`, then `--set`.
fn resolve_training_config(a: &TrainArgs) -> Result<TrainingConfig, Failure> {
    if !PRESETS.contains(&a.preset.as_str()) {
        return Err(usage(format!("unknown preset {:?}; expected one of {PRESETS:?}", a.preset)));
    }
    let mut cfg = TrainingConfig::preset(&a.preset).map_err(usage)?;
    if let Some(path) = &a.config {
        cfg = apply_toml(&cfg, &read_text(path)?).map_err(usage)?;
    }
    if let Some(spec) = &a.losses {
        cfg.losses = cfg.losses.clone().with_preset(spec).map_err(usage)?;
    }
    cfg = apply_overrides(&cfg, &a.overrides).map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    for root in &a.data {
        require_exists(root)?;
    }
    let state = match &a.resume {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let cfg = match &state {
        Some(s) => s.config.clone(),
        None => resolve_training_config(&a)?,
    };
    let layouts: Vec<DatasetLayout> = a.data.iter().map(DatasetLayout::new).collect();
    let data = UnpairedSet::load_many(&layouts)?;
    write_snapshot(&a.out, &cfg.to_toml()?)?;
    let mut trainer = match state {
        Some(s) => Trainer::from_checkpoint(s, Some(&a.out))?,
        None => Trainer::new(cfg.clone(), Some(&a.out))?,
    };
    let active: Vec<&str> = LossTerm::ALL.iter().filter(|t| cfg.losses.is_active(**t)).map(|t| t.name()).collect();
    eprintln!(
        "training {} pairs/epoch, epochs {}..={}, terms [{}]",
        data.pairs_per_epoch(),
        trainer.state.epoch + 1,
        cfg.epochs,
        active.join(", ")
    );
    while trainer.state.epoch < cfg.epochs {
        let (mut total, mut cc, mut n) = (0.0, 0.0, 0.0);
        trainer.train_epoch(&data, &mut |l: &StepLog| {
            total += l.total;
            cc += l.components.cc;
            n += 1.0;
        })?;
        eprintln!(
            "epoch {:>4}  step {:>6}  total {:.4}  cc {:.4}",
            trainer.state.epoch,
            trainer.state.step,
            total / n,
            cc / n
        );
    }
    if let Some(path) = trainer.last_checkpoint() {
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct DerainSnapshot<'a> {
    checkpoint: String,
    checkpoint_config_hash: &'a str,
    input: String,
}

fn derain(a: DerainArgs) -> Result<(), Failure> {
    require_exists(&a.input)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        list_images(&a.input)?.into_iter().map(|n| a.input.join(n)).collect()
    } else {
        vec![a.input.clone()]
    };
    let hash = ckpt.config.hash();
    let body = to_toml(&DerainSnapshot {
        checkpoint: a.checkpoint.display().to_string(),
        checkpoint_config_hash: &hash,
        input: a.input.display().to_string(),
    })?;
    let text = [("tool_version", TOOL_VERSION), ("effective_config", body.as_str())];
    let mut out = std::io::stdout().lock();
    for input in inputs {
        let (derained, mask) = derain_to_files(&ckpt.bundle, &input, &a.out, &text)?;
        let _ = writeln!(out, "{}\t{}", derained.display(), mask.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct RainmakeSnapshot<'a> {
    checkpoint: String,
    checkpoint_config_hash: &'a str,
    clean: String,
}

fn rainmake_cmd(a: RainmakeArgs) -> Result<(), Failure> {
    require_exists(&a.clean)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let hash = ckpt.config.hash();
    let body = to_toml(&RainmakeSnapshot {
        checkpoint: a.checkpoint.display().to_string(),
        checkpoint_config_hash: &hash,
        clean: a.clean.display().to_string(),
    })?;
    write_snapshot(&a.out, &body)?;
    let manifest = rainmake(&ckpt.bundle, &hash, &a.clean, &a.out)?;
    println!("{} pairs written to {}", manifest.files.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSnapshot {
    checkpoint: Option<String>,
    checkpoint_config_hash: Option<String>,
    data: String,
    color_mode: &'static str,
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    require_exists(&a.data)?;
    let ckpt = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let mode = if a.luma { ColorMode::Luma } else { ColorMode::Rgb };
    let layout = DatasetLayout::new(&a.data);
    let report = match &ckpt {
        Some(c) => evaluate(&c.bundle, &layout, mode)?,
        None => evaluate_identity(&layout, mode)?,
    };
    let body = to_toml(&EvalSnapshot {
        checkpoint: a.checkpoint.as_ref().map(|p| p.display().to_string()),
        checkpoint_config_hash: ckpt.as_ref().map(|c| c.config.hash()),
        data: a.data.display().to_string(),
        color_mode: if a.luma { "luma" } else { "rgb" },
    })?;
    write_snapshot(&a.out, &body)?;
    let path = a.out.join(METRICS_FILE);
    std::fs::write(&path, report.to_csv()).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!("psnr {:.4} dB  ssim {:.4}  ({} images)", report.mean_psnr(), report.mean_ssim(), report.images.len());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = SynthDataSpec::default();
    if let Some(path) = &a.config {
        spec = apply_toml(&spec, &read_text(path)?).map_err(usage)?;
    }
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.train_per_domain = a.train_per_domain.unwrap_or(spec.train_per_domain);
    spec.test_pairs = a.test_pairs.unwrap_or(spec.test_pairs);
    spec.size = a.size.unwrap_or(spec.size);
    spec = apply_overrides(&spec, &a.overrides).map_err(usage)?;
    spec.rain.validate().map_err(usage)?;
    if spec.size < crate::imaging::MIN_SIDE || spec.train_per_domain == 0 {
        return Err(usage(format!(
            "size must be at least {} and train_per_domain at least 1",
            crate::imaging::MIN_SIDE
        )));
    }
    write_snapshot(&a.out, &to_toml(&spec)?)?;
    let m = write_synth_dataset(&a.out, &spec)?;
    println!(
        "{} rainy, {} rain-free, {} test pairs in {}",
        m.rain.len(),
        m.norain.len(),
        m.paired_test.len(),
        a.out.display()
    );
    Ok(())
}
