use serde::{Deserialize, Serialize};

use super::batches::Cycler;
use super::config::{Mode, TrainConfig};
use super::state::{LabeledBatch, Models, Sampler, TrainState, UnlabeledBatch};
use crate::data::{assign_views, image_batch, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_probs, image_chunks, EvalSummary, MetricsReport};
use crate::losses::LossBreakdown;
use crate::tensor::MapBatch;

const STREAM_VIEW1: u64 = 201;
const STREAM_VIEW2: u64 = 202;
const STREAM_UNLABELED: u64 = 203;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based
    pub epoch: usize,
    pub mode: Mode,
    pub label_fraction: f64,
    pub seed: u64,
    /// mean over the epoch's segmentation steps
    pub losses: LossBreakdown,
    /// mean over the epoch's critic steps; absent without a critic
    pub critic_loss: Option<f64>,
    /// mean per-sample DSC on the 0–100 scale
    pub test_dsc: f64,
    pub test_mae: f64,
    pub seg_steps: u64,
    pub critic_steps: u64,
}

/// What an observer sees after every epoch.
pub struct EpochEvent<'a> {
    pub record: &'a EpochRecord,
    pub state: &'a TrainState,
    /// the test DSC beat every earlier epoch
    pub improved: bool,
}

pub struct FitOutput {
    pub state: TrainState,
    /// networks at the epoch with the best test DSC
    pub best: Models,
    pub records: Vec<EpochRecord>,
    /// scores of `best`
    pub best_summary: EvalSummary,
    pub report: MetricsReport,
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        total: sum(|b| b.total),
        supervised: sum(|b| b.supervised),
        unsupervised: sum(|b| b.unsupervised),
        critic_adv: sum(|b| b.critic_adv),
        ce: sum(|b| b.ce),
        dice: sum(|b| b.dice),
        adv1: sum(|b| b.adv1),
        adv2: sum(|b| b.adv2),
    }
}

/// Scores the test-time predictor of `models` on `samples`.
pub fn evaluate_models(models: &Models, cfg: &TrainConfig, samples: &[Sample]) -> Result<EvalSummary> {
    let mut parts = Vec::new();
    for batch in image_chunks(samples.iter().map(|s| &s.image), 16)? {
        parts.push(models.predict(cfg.inference, &batch)?);
    }
    let probs = MapBatch::concat(&parts.iter().collect::<Vec<_>>())?;
    evaluate_probs(&probs, samples)
}

/// Batches handed out per epoch.
pub fn batches_per_epoch(cfg: &TrainConfig, split: &DatasetSplit) -> usize {
    cfg.batches_per_epoch.unwrap_or_else(|| {
        let pool = split.train_labeled.len() + split.train_unlabeled.len();
        pool.div_ceil(cfg.batch_size).max(1)
    })
}

fn pseudo_masks(state: &TrainState, split: &DatasetSplit) -> Result<Vec<Vec<f32>>> {
    let threshold = state.config.pseudo_threshold as f32;
    let mut out = Vec::with_capacity(split.train_unlabeled.len());
    for batch in image_chunks(split.train_unlabeled.iter().map(|s| &s.image), 16)? {
        let probs = state.models.f1.predict(&batch)?;
        for i in 0..probs.len() {
            out.push(probs.map(i).iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).collect());
        }
    }
    Ok(out)
}

/// Runs `config.epochs` epochs of the configured mode. Each batch iteration
/// performs `k_s` segmentation steps, then `k_c` critic steps, on the same
/// batches. The observer runs after every epoch; an error from it stops training.
pub fn fit(
    config: &TrainConfig,
    split: &DatasetSplit,
    observer: &mut dyn FnMut(&EpochEvent<'_>) -> Result<()>,
) -> Result<FitOutput> {
    config.validate()?;
    if split.test.is_empty() {
        return Err(Error::config("split", "test set is empty"));
    }
    let multiple = config.spatial_multiple();
    let res = split.test[0].mask.height();
    if res % multiple != 0 || split.test[0].mask.width() % multiple != 0 {
        return Err(Error::config(
            "resolution",
            format!("{res} is not divisible by {multiple} required by the network depth"),
        ));
    }
    let views = assign_views(split, config.seed)?;
    let mut state = TrainState::new(config.clone())?;
    state.sampler = Some(Sampler {
        view1: Cycler::new(views.view1.len(), config.seed, STREAM_VIEW1),
        view2: Cycler::new(views.view2.len(), config.seed, STREAM_VIEW2),
        unlabeled: Cycler::new(split.train_unlabeled.len(), config.seed, STREAM_UNLABELED),
    });
    let n_batches = batches_per_epoch(config, split);
    let b = config.batch_size;
    let use_unlabeled = config.mode.uses_unlabeled() && !split.train_unlabeled.is_empty();
    let test_hash = split.manifest().test_hash();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best = state.models.clone();
    let mut best_summary = None;
    for epoch in 0..config.epochs {
        state.pseudo_weight = config.pseudo_weight_at(epoch);
        let pseudo = if config.mode == Mode::PseudoLabel && use_unlabeled && state.pseudo_weight > 0.0 {
            Some(pseudo_masks(&state, split)?)
        } else {
            None
        };
        let mut seg_losses = Vec::with_capacity(n_batches * config.k_s);
        let mut critic_losses = Vec::new();
        for _ in 0..n_batches {
            let sampler = state.sampler.as_mut().expect("set above");
            let pick = |idx: Vec<usize>, view: &[usize]| -> Vec<&Sample> {
                idx.into_iter().map(|i| &split.train_labeled[view[i]]).collect()
            };
            let v1 = LabeledBatch::from_samples(&pick(sampler.view1.next_batch(b), &views.view1))?;
            let v2 = LabeledBatch::from_samples(&pick(sampler.view2.next_batch(b), &views.view2))?;
            let unlabeled = if use_unlabeled {
                let idx = sampler.unlabeled.next_batch(b);
                let images = image_batch(idx.iter().map(|&i| &split.train_unlabeled[i].image))?;
                let pseudo_masks = match &pseudo {
                    Some(p) => {
                        let (h, w) = (images.height(), images.width());
                        let data = idx.iter().flat_map(|&i| p[i].iter().copied()).collect();
                        Some(MapBatch::new(idx.len(), h, w, data)?)
                    }
                    None => None,
                };
                Some(UnlabeledBatch { images, pseudo_masks })
            } else {
                None
            };
            for _ in 0..config.k_s {
                seg_losses.push(state.train_step_seg(&v1, &v2, unlabeled.as_ref())?);
            }
            if state.models.critic.is_some() {
                for _ in 0..config.k_c {
                    if let Some(l) = state.train_step_critic(&v1, &v2)? {
                        critic_losses.push(l);
                    }
                }
            }
        }
        state.epoch = epoch + 1;
        let summary = evaluate_models(&state.models, config, &split.test)?;
        let improved = summary.dsc_percent > state.best_test_dsc;
        if improved {
            state.best_test_dsc = summary.dsc_percent;
            state.best_epoch = Some(state.epoch);
            best = state.models.clone();
        }
        let record = EpochRecord {
            epoch: state.epoch,
            mode: config.mode,
            label_fraction: config.label_fraction,
            seed: config.seed,
            losses: mean_breakdown(&seg_losses),
            critic_loss: (!critic_losses.is_empty())
                .then(|| critic_losses.iter().sum::<f64>() / critic_losses.len() as f64),
            test_dsc: summary.dsc_percent,
            test_mae: summary.mae,
            seg_steps: state.seg_steps,
            critic_steps: state.critic_steps,
        };
        if improved {
            best_summary = Some(summary);
        }
        observer(&EpochEvent {
            record: &record,
            state: &state,
            improved,
        })?;
        records.push(record);
    }
    let best_summary = best_summary.expect("at least one epoch ran");
    let report = MetricsReport::new(
        config.mode.name(),
        config.label_fraction,
        config.seed,
        &best_summary,
        &test_hash,
    );
    Ok(FitOutput {
        state,
        best,
        records,
        best_summary,
        report,
    })
}

/// Mean-teacher baseline: `fit` with the mode forced to `mean_teacher`.
pub fn fit_baseline_mean_teacher(config: &TrainConfig, split: &DatasetSplit) -> Result<FitOutput> {
    let cfg = TrainConfig {
        mode: Mode::MeanTeacher,
        ..config.clone()
    };
    fit(&cfg, split, &mut |_| Ok(()))
}

/// Pseudo-label baseline: `fit` with the mode forced to `pseudo_label`.
pub fn fit_baseline_pseudo_label(config: &TrainConfig, split: &DatasetSplit) -> Result<FitOutput> {
    let cfg = TrainConfig {
        mode: Mode::PseudoLabel,
        ..config.clone()
    };
    fit(&cfg, split, &mut |_| Ok(()))
}
