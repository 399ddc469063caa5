//! Dice/MAE metrics, confidence maps, qualitative panels and comparison tables.
//!
//! Dataset scores are computed per sample and then averaged in sample order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{save_gray_png, MaskTensor, Sample};
use crate::error::{Error, Result};
use crate::nn::UNet;
use crate::tensor::{ImageBatch, MapBatch};

/// Probabilities at or above this value count as foreground.
pub const THRESHOLD: f32 = 0.5;

fn check_len(pred: usize, target: &MaskTensor, what: &str) -> Result<()> {
    let n = target.height() * target.width();
    if pred != n {
        return Err(Error::Shape(format!("{what}: prediction has {pred} pixels, target has {n}")));
    }
    Ok(())
}

/// `2|P∩Y| / (|P| + |Y|)`; two empty masks score 1.
pub fn dsc(pred: &MaskTensor, target: &MaskTensor) -> Result<f64> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::Shape(format!(
            "dsc: {}×{} vs {}×{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    Ok(dice_counts(pred.data().iter().map(|&p| p == 1), target))
}

fn dice_counts(pred: impl Iterator<Item = bool>, target: &MaskTensor) -> f64 {
    let (mut inter, mut np, mut ny) = (0usize, 0usize, 0usize);
    for (p, &y) in pred.zip(target.data()) {
        let y = y == 1;
        inter += (p && y) as usize;
        np += p as usize;
        ny += y as usize;
    }
    if np + ny == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + ny) as f64
    }
}

/// DSC of a probability map thresholded at [`THRESHOLD`].
pub fn dsc_from_probs(probs: &[f32], target: &MaskTensor) -> Result<f64> {
    check_len(probs.len(), target, "dsc")?;
    Ok(dice_counts(probs.iter().map(|&p| p >= THRESHOLD), target))
}

/// Mean absolute difference between a probability map and a binary mask.
pub fn mae(probs: &[f32], target: &MaskTensor) -> Result<f64> {
    check_len(probs.len(), target, "mae")?;
    let n = probs.len().max(1) as f64;
    Ok(probs
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| (p as f64 - y as f64).abs())
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: usize,
    pub dsc: f64,
    pub mae: f64,
}

/// Scores of one model on one set of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// mean per-sample DSC on the 0–100 scale
    pub dsc_percent: f64,
    pub mae: f64,
    pub n: usize,
    pub per_sample: Vec<SampleScore>,
}

/// Scores precomputed probability maps (`probs.map(i)` belongs to `samples[i]`).
pub fn evaluate_probs(probs: &MapBatch<f32>, samples: &[Sample]) -> Result<EvalSummary> {
    if probs.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} probability maps for {} samples",
            probs.len(),
            samples.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        per_sample.push(SampleScore {
            id: s.id,
            dsc: dsc_from_probs(probs.map(i), &s.mask)?,
            mae: mae(probs.map(i), &s.mask)?,
        });
    }
    let n = per_sample.len();
    let denom = n.max(1) as f64;
    Ok(EvalSummary {
        dsc_percent: 100.0 * per_sample.iter().map(|s| s.dsc).sum::<f64>() / denom,
        mae: per_sample.iter().map(|s| s.mae).sum::<f64>() / denom,
        n,
        per_sample,
    })
}

/// Images of `samples` in chunks of `chunk`, for inference without large batches.
pub fn image_chunks<'a>(
    images: impl IntoIterator<Item = &'a crate::data::ImageTensor>,
    chunk: usize,
) -> Result<Vec<ImageBatch<f32>>> {
    let all: Vec<_> = images.into_iter().collect();
    all.chunks(chunk.max(1))
        .map(|c| crate::data::image_batch(c.iter().copied()))
        .collect()
}

/// Runs `net` over the images of `samples` and concatenates the maps.
pub fn predict_samples(net: &UNet<f32>, samples: &[Sample]) -> Result<MapBatch<f32>> {
    let mut parts = Vec::new();
    for batch in image_chunks(samples.iter().map(|s| &s.image), 16)? {
        parts.push(net.predict(&batch)?);
    }
    MapBatch::concat(&parts.iter().collect::<Vec<_>>())
}

/// Writes ψ(pred) as an 8-bit grayscale PNG (round half up) and returns the map.
pub fn export_confidence_map(critic: &UNet<f32>, pred: &MapBatch<f32>, index: usize, path: &Path) -> Result<Vec<f32>> {
    let single = pred.slice(index, 1);
    let conf = critic.predict(&ImageBatch::from_maps(&single))?;
    save_gray_png(path, conf.width(), conf.height(), conf.data())?;
    Ok(conf.into_data())
}

/// Final scores of one method at one label fraction and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub label_fraction: f64,
    pub seed: u64,
    pub dsc_percent: f64,
    pub mae: f64,
    pub n_test: usize,
    /// hash of the test ids the scores were computed on
    pub test_split_hash: String,
    /// always "per_sample_mean": DSC is computed per sample, then averaged
    pub dsc_reduction: String,
}

impl MetricsReport {
    pub fn new(method: &str, label_fraction: f64, seed: u64, summary: &EvalSummary, test_split_hash: &str) -> Self {
        Self {
            method: method.to_string(),
            label_fraction,
            seed,
            dsc_percent: summary.dsc_percent,
            mae: summary.mae,
            n_test: summary.n,
            test_split_hash: test_split_hash.to_string(),
            dsc_reduction: "per_sample_mean".into(),
        }
    }
}

/// Seed-averaged cell of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub dsc_percent: f64,
    pub mae: f64,
    pub seeds: usize,
}

/// Methods as rows (in first-seen order), label fractions as columns (ascending).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<String>,
    pub fractions: Vec<f64>,
    /// `cells[method][fraction]`; `None` where no report exists
    pub cells: Vec<Vec<Option<ComparisonCell>>>,
}

/// Groups reports into a table. All reports sharing a seed must share a test split.
pub fn build_comparison(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    let mut by_seed: BTreeMap<u64, &str> = BTreeMap::new();
    for r in reports {
        let h = by_seed.entry(r.seed).or_insert(&r.test_split_hash);
        if *h != r.test_split_hash {
            return Err(Error::SplitHashMismatch(h.to_string(), r.test_split_hash.clone()));
        }
    }
    let mut methods: Vec<String> = Vec::new();
    let mut fractions: Vec<f64> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        if !fractions.contains(&r.label_fraction) {
            fractions.push(r.label_fraction);
        }
    }
    fractions.sort_by(f64::total_cmp);
    let cells = methods
        .iter()
        .map(|m| {
            fractions
                .iter()
                .map(|&f| {
                    let hits: Vec<_> = reports
                        .iter()
                        .filter(|r| &r.method == m && r.label_fraction == f)
                        .collect();
                    (!hits.is_empty()).then(|| {
                        let k = hits.len() as f64;
                        ComparisonCell {
                            dsc_percent: hits.iter().map(|r| r.dsc_percent).sum::<f64>() / k,
                            mae: hits.iter().map(|r| r.mae).sum::<f64>() / k,
                            seeds: hits.len(),
                        }
                    })
                })
                .collect()
        })
        .collect();
    Ok(ComparisonTable {
        methods,
        fractions,
        cells,
    })
}

fn pct(f: f64) -> String {
    let p = f * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{p}%")
    }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for metric in ["dsc", "mae"] {
            for &f in &self.fractions {
                let _ = write!(out, ",{metric}@{}", pct(f));
            }
        }
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.cells) {
            out.push_str(m);
            for cell in row {
                match cell {
                    Some(c) => {
                        let _ = write!(out, ",{:.4}", c.dsc_percent);
                    }
                    None => out.push(','),
                }
            }
            for cell in row {
                match cell {
                    Some(c) => {
                        let _ = write!(out, ",{:.6}", c.mae);
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for (title, dsc) in [("DSC (%)", true), ("MAE", false)] {
            let _ = writeln!(out, "### {title}\n");
            out.push_str("| method |");
            for &f in &self.fractions {
                let _ = write!(out, " {} |", pct(f));
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(self.fractions.len()));
            out.push('\n');
            for (m, row) in self.methods.iter().zip(&self.cells) {
                let _ = write!(out, "| {m} |");
                for cell in row {
                    match cell {
                        Some(c) if dsc => {
                            let _ = write!(out, " {:.2} |", c.dsc_percent);
                        }
                        Some(c) => {
                            let _ = write!(out, " {:.4} |", c.mae);
                        }
                        None => out.push_str(" – |"),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Writes `comparison.csv` and `comparison.md` into `out_dir`.
pub fn render_comparison(reports: &[MetricsReport], out_dir: &Path) -> Result<ComparisonTable> {
    let table = build_comparison(reports)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("comparison.csv"), table.to_csv())?;
    fs::write(out_dir.join("comparison.md"), table.to_markdown())?;
    Ok(table)
}

const PANEL_GAP: usize = 2;

/// Writes `panel_<split>_<id>.png`: input | ground truth | one tile per prediction,
/// separated by white gaps. Multi-channel inputs show their channel mean.
pub fn render_panel(out_dir: &Path, split: &str, sample: &Sample, predictions: &[&[f32]]) -> Result<PathBuf> {
    let (h, w) = (sample.mask.height(), sample.mask.width());
    let hw = h * w;
    let c = sample.image.channels();
    let input: Vec<f32> = (0..hw)
        .map(|p| (0..c).map(|ch| sample.image.data()[ch * hw + p]).sum::<f32>() / c as f32)
        .collect();
    let gt: Vec<f32> = sample.mask.data().iter().map(|&v| v as f32).collect();
    let mut tiles: Vec<&[f32]> = vec![&input, &gt];
    for p in predictions {
        check_len(p.len(), &sample.mask, "panel")?;
        tiles.push(p);
    }
    let width = tiles.len() * w + (tiles.len() - 1) * PANEL_GAP;
    let mut canvas = vec![1.0f32; width * h];
    for (t, tile) in tiles.iter().enumerate() {
        let x0 = t * (w + PANEL_GAP);
        for y in 0..h {
            canvas[y * width + x0..y * width + x0 + w].copy_from_slice(&tile[y * w..(y + 1) * w]);
        }
    }
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("panel_{split}_{}.png", sample.id));
    save_gray_png(&path, width, h, &canvas)?;
    Ok(path)
}
