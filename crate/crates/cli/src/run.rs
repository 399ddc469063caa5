//! Run directories: one per training run, named `<utc timestamp>-<config hash>`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use duoseg_core::checkpoint::Checkpoint;
use duoseg_core::data::{make_split, DatasetSplit, SplitManifest};
use duoseg_core::eval::MetricsReport;
use duoseg_core::trainer::{fit, EpochRecord};
use duoseg_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CKPT_BEST: &str = "ckpt_best.duoseg";
pub const CKPT_LAST: &str = "ckpt_last.duoseg";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub split_hash: String,
    pub test_split_hash: String,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    /// "running", "completed" or "aborted: <reason>"
    pub status: String,
    pub files: Vec<String>,
}

fn now() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Creates `<root>/<timestamp>-<hash8>`, adding `-<k>` when the name is taken.
pub fn create_run_dir(root: &Path, config_hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let base = format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), &config_hash[..8]);
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{k}"));
        k += 1;
    }
    fs::create_dir(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize)]
struct TimingRecord {
    epoch: usize,
    wall_time_s: f64,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: MetricsReport,
    pub records: Vec<EpochRecord>,
}

/// Failure of a run, with the directory it left behind (if any).
#[derive(Debug)]
pub struct RunFailure {
    pub dir: Option<PathBuf>,
    pub error: Error,
    /// training had started, so the failure is an abort rather than a setup error
    pub during_training: bool,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            dir: None,
            error,
            during_training: false,
        }
    }
}

/// Builds the split a run trains on.
pub fn split_for(config: &ExperimentConfig) -> Result<DatasetSplit> {
    let samples = config.data.load()?;
    let t = &config.train;
    make_split(samples, t.train_fraction, t.label_fraction, t.seed)
}

/// Trains one configuration inside a fresh run directory under `root`.
pub fn execute_run(config: &ExperimentConfig, root: &Path) -> std::result::Result<RunOutcome, RunFailure> {
    config.validate()?;
    let split = split_for(config)?;
    let split_manifest = split.manifest();
    let config_hash = config.hash();
    let dir = create_run_dir(root, &config_hash)?;
    let fail = |error: Error, during_training: bool| RunFailure {
        dir: Some(dir.clone()),
        error,
        during_training,
    };

    let mut manifest = RunManifest {
        config: config.clone(),
        config_hash,
        split_hash: split_manifest.hash(),
        test_split_hash: split_manifest.test_hash(),
        code_version: concat!("duoseg ", env!("CARGO_PKG_VERSION")).into(),
        started_at: now(),
        finished_at: None,
        status: "running".into(),
        files: [CONFIG_FILE, SPLIT_FILE, METRICS_FILE, TIMING_FILE, CKPT_BEST, CKPT_LAST, REPORT_FILE]
            .map(String::from)
            .to_vec(),
    };
    let setup = (|| -> Result<(File, File)> {
        fs::write(dir.join(CONFIG_FILE), config.to_toml())?;
        write_json(&dir.join(SPLIT_FILE), &split_manifest)?;
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok((File::create(dir.join(METRICS_FILE))?, File::create(dir.join(TIMING_FILE))?))
    })();
    let (mut metrics, mut timing) = setup.map_err(|e| fail(e, false))?;

    let resolution = [config.data.resolution(); 2];
    let start = Instant::now();
    let result = fit(&config.train, &split, &mut |ev| {
        let mut line = serde_json::to_string(ev.record)?;
        line.push('\n');
        metrics.write_all(line.as_bytes())?;
        let mut t = serde_json::to_string(&TimingRecord {
            epoch: ev.record.epoch,
            wall_time_s: start.elapsed().as_secs_f64(),
        })?;
        t.push('\n');
        timing.write_all(t.as_bytes())?;
        let ckpt = Checkpoint::from_state(ev.state, resolution);
        if ev.improved {
            ckpt.save(&dir.join(CKPT_BEST))?;
        }
        ckpt.save(&dir.join(CKPT_LAST))?;
        log::info!(
            "{} epoch {}/{}: loss {:.4}, test DSC {:.2}, MAE {:.4}",
            ev.record.mode,
            ev.record.epoch,
            config.train.epochs,
            ev.record.losses.total,
            ev.record.test_dsc,
            ev.record.test_mae
        );
        Ok(())
    });
    match result {
        Ok(out) => {
            write_json(&dir.join(REPORT_FILE), &out.report).map_err(|e| fail(e, false))?;
            manifest.finished_at = Some(now());
            manifest.status = "completed".into();
            write_json(&dir.join(MANIFEST_FILE), &manifest).map_err(|e| fail(e, false))?;
            Ok(RunOutcome {
                dir,
                report: out.report,
                records: out.records,
            })
        }
        Err(e) => {
            manifest.finished_at = Some(now());
            manifest.status = format!("aborted: {e}");
            let _ = write_json(&dir.join(MANIFEST_FILE), &manifest);
            Err(fail(e, true))
        }
    }
}

/// Split manifest persisted in a run directory.
pub fn read_split(dir: &Path) -> Result<SplitManifest> {
    read_json(&dir.join(SPLIT_FILE))
}
