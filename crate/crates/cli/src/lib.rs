//! The `duoseg` command line: training runs, sweeps, synthetic data,
//! checkpoint evaluation and volume slicing.
//!
//! Exit codes: 0 success, 1 partial sweep failure, 2 usage or configuration
//! error, 3 training abort.

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};
use duoseg_core::checkpoint::Checkpoint;
use duoseg_core::data::{generate_synthetic_dataset, save_gray_png, save_gray_png16, slice_volume, DatasetSplit, SynthConfig};
use duoseg_core::eval::{export_confidence_map, render_comparison, render_panel, MetricsReport};
use duoseg_core::trainer::{evaluate_models, InferenceView, Mode};
use duoseg_core::Error;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::run::{execute_run, read_json, read_split, RunFailure, CONFIG_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "duoseg", version, about = "Semi-supervised segmentation with co-trained networks and a critic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// TOML experiment file; missing keys take default values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = PossibleValuesParser::new(Mode::NAMES))]
    pub mode: Option<String>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long)]
    pub k_s: Option<usize>,
    #[arg(long)]
    pub k_c: Option<usize>,
    #[arg(long)]
    pub lambda_u: Option<f64>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long, value_parser = PossibleValuesParser::new(["f1", "f2", "average"]))]
    pub inference: Option<String>,
    /// output root; run directories are created inside it
    #[arg(long, env = "DUOSEG_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration
    Train(TrainArgs),
    /// Train every mode × label fraction × seed and render a comparison table
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// comma-separated modes
        #[arg(long, value_delimiter = ',', value_parser = PossibleValuesParser::new(Mode::NAMES), required = true)]
        modes: Vec<String>,
        /// comma-separated label fractions
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        /// comma-separated seeds; defaults to the config seed
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, env = "DUOSEG_OUT", default_value = "runs")]
        out: PathBuf,
    },
    /// Write a synthetic image/mask dataset with its shape parameters
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(short = 'o', long)]
        out: PathBuf,
        /// replace an existing dataset in the target directory
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a run's checkpoint on one of its splits
    Eval {
        /// run directory written by `train`
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "best", value_parser = PossibleValuesParser::new(["best", "last"]))]
        checkpoint: String,
        #[arg(long, default_value = "test", value_parser = PossibleValuesParser::new(["test", "labeled"]))]
        split: String,
        /// evaluate on data loaded at this resolution instead of the configured one
        #[arg(long)]
        resolution: Option<usize>,
        /// write the critic's confidence map for every evaluated sample
        #[arg(long)]
        export_confidence: bool,
        /// write qualitative panels for the first N samples
        #[arg(long, default_value_t = 0)]
        panels: usize,
    },
    /// Slice a raw float32 volume into PNG images
    Slice {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long, default_value_t = 0)]
        axis: usize,
        #[arg(short = 'o', long)]
        out: PathBuf,
        /// keep raw values (clamped to [0, 1]) instead of min-max scaling each slice
        #[arg(long)]
        no_normalize: bool,
    },
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::usage(e)
    }
}

impl From<RunFailure> for CliError {
    fn from(f: RunFailure) -> Self {
        if !f.during_training {
            return Self::usage(f.error);
        }
        let mut message = format!("training aborted: {}", f.error);
        if let Some(dir) = &f.dir {
            let best = dir.join(run::CKPT_BEST);
            if best.exists() {
                message.push_str(&format!("; last good checkpoint: {}", best.display()));
            } else {
                message.push_str(&format!("; no checkpoint was written (run directory {})", dir.display()));
            }
        }
        Self {
            code: EXIT_ABORT,
            message,
        }
    }
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Train(args) => cmd_train(&args),
        Command::Sweep {
            config,
            modes,
            fractions,
            seeds,
            out,
        } => cmd_sweep(config.as_deref(), &modes, &fractions, &seeds, &out),
        Command::Synth {
            n,
            res,
            seed,
            noise,
            out,
            force,
        } => cmd_synth(
            &SynthConfig {
                n,
                resolution: res,
                seed,
                noise_level: noise,
            },
            &out,
            force,
        ),
        Command::Eval {
            run,
            checkpoint,
            split,
            resolution,
            export_confidence,
            panels,
        } => cmd_eval(&run, &checkpoint, &split, resolution, export_confidence, panels),
        Command::Slice {
            volume,
            axis,
            out,
            no_normalize,
        } => {
            let files = slice_volume(&volume, axis, &out, !no_normalize)?;
            println!("wrote {} slices to {}", files.len(), out.display());
            Ok(EXIT_OK)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    Ok(match path {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    })
}

/// Applies command-line overrides on top of the file (CLI > file > defaults).
pub fn apply_overrides(cfg: &mut ExperimentConfig, args: &TrainArgs) -> Result<(), CliError> {
    let t = &mut cfg.train;
    if let Some(m) = &args.mode {
        t.mode = m.parse()?;
    }
    if let Some(v) = args.label_fraction {
        t.label_fraction = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if args.batches_per_epoch.is_some() {
        t.batches_per_epoch = args.batches_per_epoch;
    }
    if let Some(v) = args.k_s {
        t.k_s = v;
    }
    if let Some(v) = args.k_c {
        t.k_c = v;
    }
    if let Some(v) = args.lambda_u {
        t.weights.lambda_u = v;
    }
    if let Some(v) = args.lambda_c {
        t.weights.lambda_c = v;
    }
    if let Some(v) = &args.inference {
        t.inference = match v.as_str() {
            "f2" => InferenceView::F2,
            "average" => InferenceView::Average,
            _ => InferenceView::F1,
        };
    }
    cfg.validate()?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    apply_overrides(&mut cfg, args)?;
    let outcome = execute_run(&cfg, &args.out)?;
    println!(
        "{}: test DSC {:.2}, MAE {:.4} (best epoch) -> {}",
        cfg.train.mode,
        outcome.report.dsc_percent,
        outcome.report.mae,
        outcome.dir.display()
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SweepEntry {
    mode: String,
    label_fraction: f64,
    seed: u64,
    run_dir: Option<PathBuf>,
    status: String,
}

pub fn cmd_sweep(
    config: Option<&Path>,
    modes: &[String],
    fractions: &[f64],
    seeds: &[u64],
    out: &Path,
) -> Result<i32, CliError> {
    let base = load_config(config)?;
    let seeds = if seeds.is_empty() { vec![base.train.seed] } else { seeds.to_vec() };
    let mut plan = Vec::new();
    for &seed in &seeds {
        for m in modes {
            for &f in fractions {
                let mut cfg = base.clone();
                cfg.train.mode = m.parse()?;
                cfg.train.label_fraction = f;
                cfg.train.seed = seed;
                cfg.validate()?;
                plan.push(cfg);
            }
        }
    }
    let dir = run::create_run_dir(&out.to_path_buf(), &base.hash())?;
    let sweep_dir = dir.with_file_name(format!("sweep-{}", dir.file_name().and_then(|s| s.to_str()).unwrap_or("run")));
    fs::rename(&dir, &sweep_dir).map_err(|e| CliError::usage(Error::Io(e)))?;

    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut entries = Vec::new();
    for cfg in &plan {
        let t = &cfg.train;
        log::info!("sweep: {} at {} (seed {})", t.mode, t.label_fraction, t.seed);
        let (run_dir, status) = match execute_run(cfg, &sweep_dir) {
            Ok(o) => {
                reports.push(o.report);
                (Some(o.dir), "completed".to_string())
            }
            Err(f) => {
                eprintln!("sweep: {} at {} (seed {}) failed: {}", t.mode, t.label_fraction, t.seed, f.error);
                (f.dir, format!("failed: {}", f.error))
            }
        };
        entries.push(SweepEntry {
            mode: t.mode.name().into(),
            label_fraction: t.label_fraction,
            seed: t.seed,
            run_dir,
            status,
        });
    }
    let failed = entries.iter().filter(|e| e.status != "completed").count();
    fs::write(
        sweep_dir.join("sweep.json"),
        serde_json::to_string_pretty(&entries).map_err(|e| CliError::usage(Error::Json(e)))?,
    )
    .map_err(|e| CliError::usage(Error::Io(e)))?;
    if !reports.is_empty() {
        render_comparison(&reports, &sweep_dir)?;
        println!("{}", fs::read_to_string(sweep_dir.join("comparison.md")).unwrap_or_default());
    }
    println!(
        "sweep: {} of {} runs completed -> {}",
        entries.len() - failed,
        entries.len(),
        sweep_dir.display()
    );
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

pub fn cmd_synth(cfg: &SynthConfig, out: &Path, force: bool) -> Result<i32, CliError> {
    cfg.validate()?;
    let non_empty = out.is_dir() && fs::read_dir(out).map_err(Error::Io)?.next().is_some();
    if non_empty && !force {
        return Err(CliError::usage(format!(
            "{} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    let ds = generate_synthetic_dataset(cfg)?;
    let (images, masks) = (out.join("images"), out.join("masks"));
    for d in [&images, &masks] {
        if d.exists() {
            fs::remove_dir_all(d).map_err(Error::Io)?;
        }
        fs::create_dir_all(d).map_err(Error::Io)?;
    }
    let width = cfg.n.saturating_sub(1).to_string().len().max(4);
    for s in &ds.samples {
        let name = format!("{:0width$}.png", s.id);
        let (h, w) = (s.mask.height(), s.mask.width());
        save_gray_png16(&images.join(&name), w, h, s.image.data())?;
        let m: Vec<f32> = s.mask.data().iter().map(|&v| v as f32).collect();
        save_gray_png(&masks.join(&name), w, h, &m)?;
    }
    #[derive(Serialize)]
    struct Sidecar<'a> {
        config: &'a SynthConfig,
        shapes: &'a [duoseg_core::data::ShapeParams],
    }
    let sidecar = serde_json::to_string_pretty(&Sidecar {
        config: cfg,
        shapes: &ds.params,
    })
    .map_err(Error::Json)?;
    fs::write(out.join("params.json"), sidecar + "\n").map_err(Error::Io)?;
    println!("wrote {} samples to {}", ds.samples.len(), out.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalOutput {
    checkpoint: String,
    split: String,
    epoch: usize,
    dsc_percent: f64,
    mae: f64,
    n: usize,
    dsc_reduction: &'static str,
}

pub fn cmd_eval(
    run_dir: &Path,
    which: &str,
    split_name: &str,
    resolution: Option<usize>,
    export_confidence: bool,
    panels: usize,
) -> Result<i32, CliError> {
    let mut cfg = ExperimentConfig::read(&run_dir.join(CONFIG_FILE))?;
    let ckpt_path = run_dir.join(if which == "last" { run::CKPT_LAST } else { run::CKPT_BEST });
    let ckpt = Checkpoint::load(&ckpt_path)?;
    if ckpt.header.config_hash != cfg.train.hash() {
        return Err(CliError::usage(format!(
            "checkpoint {} was written for config {} but the run config hashes to {}",
            ckpt_path.display(),
            &ckpt.header.config_hash[..12.min(ckpt.header.config_hash.len())],
            &cfg.train.hash()[..12]
        )));
    }
    if let Some(r) = resolution {
        cfg.data.set_resolution(r);
    }
    let [ch, cw] = ckpt.header.resolution;
    let res = cfg.data.resolution();
    if (res, res) != (ch, cw) {
        return Err(CliError::usage(format!(
            "checkpoint was trained at {ch}×{cw} but evaluation images are {res}×{res}"
        )));
    }
    let split = DatasetSplit::from_manifest(cfg.data.load()?, &read_split(run_dir)?)?;
    let samples = if split_name == "labeled" { &split.train_labeled } else { &split.test };
    let models = ckpt.models()?;
    let summary = evaluate_models(&models, &cfg.train, samples)?;

    if export_confidence || panels > 0 {
        let critic = models.critic.as_ref();
        if export_confidence && critic.is_none() {
            return Err(CliError::usage(format!("mode {} trains no critic", cfg.train.mode)));
        }
        let conf_dir = run_dir.join("confidence");
        let panel_dir = run_dir.join("panels");
        if export_confidence {
            fs::create_dir_all(&conf_dir).map_err(Error::Io)?;
        }
        for (i, s) in samples.iter().enumerate() {
            if !export_confidence && i >= panels {
                break;
            }
            let pred = models.predict(cfg.train.inference, &duoseg_core::data::image_batch([&s.image])?)?;
            if let Some(critic) = critic.filter(|_| export_confidence) {
                let path = conf_dir.join(format!("conf_{split_name}_{}.png", s.id));
                export_confidence_map(critic, &pred, 0, &path)?;
            }
            if i < panels {
                render_panel(&panel_dir, split_name, s, &[pred.map(0)])?;
            }
        }
    }
    let out = EvalOutput {
        checkpoint: which.into(),
        split: split_name.into(),
        epoch: ckpt.header.epoch,
        dsc_percent: summary.dsc_percent,
        mae: summary.mae,
        n: summary.n,
        dsc_reduction: "per_sample_mean",
    };
    let text = serde_json::to_string_pretty(&out).map_err(Error::Json)?;
    fs::write(run_dir.join(format!("eval_{which}_{split_name}.json")), text + "\n").map_err(Error::Io)?;
    println!(
        "{split_name} ({} samples, {which} checkpoint, epoch {}): DSC {:.4}, MAE {:.6}",
        summary.n, ckpt.header.epoch, summary.dsc_percent, summary.mae
    );
    Ok(EXIT_OK)
}

/// Report written by a completed run.
pub fn read_report(run_dir: &Path) -> Result<MetricsReport, CliError> {
    Ok(read_json(&run_dir.join(run::REPORT_FILE))?)
}
