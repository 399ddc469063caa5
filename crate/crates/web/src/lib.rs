//! WebAssembly bindings behind `www/index.html`.
//!
//! Three operations are exposed: drawing a synthetic sample, sweeping the
//! per-pixel losses over a prediction, and stepping a small co-training run
//! while inspecting both networks and the critic's confidence map.

use duoseg_core::data::{assign_views, generate_synthetic_dataset, make_split, DatasetSplit, Sample, SynthConfig};
use duoseg_core::losses::{
    adv_loss_for_seg, adv_loss_labeled_for_critic, agreement_loss, ce_loss, dice_loss, AgreementOptions,
};
use duoseg_core::nn::{CriticConfig, SegNetConfig};
use duoseg_core::trainer::{evaluate_models, Cycler, LabeledBatch, Mode, TrainConfig, TrainState, UnlabeledBatch};
use duoseg_core::{ImageBatch, MapBatch, Result};
use wasm_bindgen::prelude::*;

fn js(e: duoseg_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A synthetic image with its mask, both row-major in `[0, 1]`.
#[wasm_bindgen]
pub struct SynthSample {
    resolution: usize,
    image: Vec<f32>,
    mask: Vec<f32>,
    shapes: usize,
}

#[wasm_bindgen]
impl SynthSample {
    #[wasm_bindgen(getter)]
    pub fn resolution(&self) -> usize {
        self.resolution
    }
    #[wasm_bindgen(getter)]
    pub fn shapes(&self) -> usize {
        self.shapes
    }
    pub fn image(&self) -> Vec<f32> {
        self.image.clone()
    }
    pub fn mask(&self) -> Vec<f32> {
        self.mask.clone()
    }
}

/// Smallest dataset the generator accepts; only the first sample is shown.
const SYNTH_BATCH: usize = 5;

fn synth_inner(seed: u32, resolution: usize, noise_level: f64) -> Result<SynthSample> {
    let ds = generate_synthetic_dataset(&SynthConfig {
        n: SYNTH_BATCH,
        resolution,
        seed: seed as u64,
        noise_level,
    })?;
    let s = &ds.samples[0];
    Ok(SynthSample {
        resolution,
        image: s.image.data().to_vec(),
        mask: s.mask.data().iter().map(|&m| m as f32).collect(),
        shapes: ds.params[0].ellipses.len(),
    })
}

#[wasm_bindgen]
pub fn synthesize(seed: u32, resolution: usize, noise_level: f64) -> std::result::Result<SynthSample, JsError> {
    synth_inner(seed, resolution, noise_level).map_err(js)
}

/// Number of series returned per grid point by [`loss_curves`].
pub const CURVE_COLUMNS: usize = 6;

/// Single-pixel losses as the prediction `p` sweeps `(0, 1)`.
///
/// Each row is `[p, ce, dice, agreement(p, q), critic(real = p, fake = q), adversarial(p)]`
/// for label `y` and partner prediction `q`.
pub fn loss_curves_inner(y: f64, q: f64, points: usize) -> Result<Vec<f64>> {
    let one = |v: f64| MapBatch::new(1, 1, 1, vec![v]);
    let (ym, qm) = (one(y)?, one(q)?);
    let mut out = Vec::with_capacity(points * CURVE_COLUMNS);
    for i in 0..points {
        let p = (i as f64 + 0.5) / points as f64;
        let pm = one(p)?;
        out.extend([
            p,
            ce_loss(&pm, &ym)?.value,
            dice_loss(&pm, &ym)?.value,
            agreement_loss(&pm, &qm, AgreementOptions::default())?.value,
            adv_loss_labeled_for_critic(&pm, &qm)?.value,
            adv_loss_for_seg(&pm)?.value,
        ]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn loss_curves(y: f64, q: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    loss_curves_inner(y, q, points).map_err(js)
}

const DEMO_N: usize = 60;
const DEMO_RES: usize = 32;
const DEMO_BATCH: usize = 2;

/// A small co-training run advanced one batch at a time.
#[wasm_bindgen]
pub struct DuoDemo {
    state: TrainState,
    split: DatasetSplit,
    view1: Vec<usize>,
    view2: Vec<usize>,
    cyclers: [Cycler; 3],
    last: Vec<f64>,
}

impl DuoDemo {
    pub fn create(seed: u32, label_fraction: f64, noise_level: f64) -> Result<Self> {
        let seed = seed as u64;
        let ds = generate_synthetic_dataset(&SynthConfig {
            n: DEMO_N,
            resolution: DEMO_RES,
            seed,
            noise_level,
        })?;
        let split = make_split(ds.samples, 0.8, label_fraction, seed)?;
        let views = assign_views(&split, seed)?;
        let config = TrainConfig {
            mode: Mode::DuoSegnet,
            seed,
            batch_size: DEMO_BATCH,
            label_fraction,
            segnet: SegNetConfig {
                in_channels: 1,
                base_width: 4,
                depth: 2,
            },
            critic: CriticConfig {
                base_width: 4,
                depth: 2,
            },
            ..Default::default()
        };
        let cyclers = [
            Cycler::new(views.view1.len(), seed, 1),
            Cycler::new(views.view2.len(), seed, 2),
            Cycler::new(split.train_unlabeled.len(), seed, 3),
        ];
        Ok(Self {
            state: TrainState::new(config)?,
            split,
            view1: views.view1,
            view2: views.view2,
            cyclers,
            last: vec![f64::NAN; 5],
        })
    }

    fn labeled(&mut self, which: usize) -> Result<LabeledBatch> {
        let view = if which == 0 { &self.view1 } else { &self.view2 };
        let picked: Vec<&Sample> = self.cyclers[which]
            .next_batch(DEMO_BATCH)
            .into_iter()
            .map(|i| &self.split.train_labeled[view[i]])
            .collect();
        LabeledBatch::from_samples(&picked)
    }

    /// One segmentation update followed by one critic update.
    pub fn advance(&mut self) -> Result<()> {
        let v1 = self.labeled(0)?;
        let v2 = self.labeled(1)?;
        let unlabeled = if self.cyclers[2].is_empty() {
            None
        } else {
            let idx = self.cyclers[2].next_batch(DEMO_BATCH);
            let images = duoseg_core::data::image_batch(idx.iter().map(|&i| &self.split.train_unlabeled[i].image))?;
            Some(UnlabeledBatch {
                images,
                pseudo_masks: None,
            })
        };
        let l = self.state.train_step_seg(&v1, &v2, unlabeled.as_ref())?;
        let c = self.state.train_step_critic(&v1, &v2)?.unwrap_or(f64::NAN);
        self.last = vec![l.total, l.supervised, l.unsupervised, l.critic_adv, c];
        Ok(())
    }

    pub fn test_dsc_percent(&self) -> Result<f64> {
        Ok(evaluate_models(&self.state.models, &self.state.config, &self.split.test)?.dsc_percent)
    }

    /// Image, mask, F1 and F2 probabilities and ψ(F1) for test sample `index`, concatenated.
    pub fn panel_maps(&self, index: usize) -> Result<Vec<f32>> {
        let s = &self.split.test[index % self.split.test.len()];
        let x = duoseg_core::data::image_batch(std::iter::once(&s.image))?;
        let m = &self.state.models;
        let p1 = m.f1.predict(&x)?;
        let p2 = m.f2.as_ref().expect("duo mode").predict(&x)?;
        let conf = m.critic.as_ref().expect("duo mode").predict(&ImageBatch::from_maps(&p1))?;
        let mut out = s.image.data().to_vec();
        out.extend(s.mask.data().iter().map(|&v| v as f32));
        out.extend_from_slice(p1.data());
        out.extend_from_slice(p2.data());
        out.extend_from_slice(conf.data());
        Ok(out)
    }
}

#[wasm_bindgen]
impl DuoDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, label_fraction: f64, noise_level: f64) -> std::result::Result<DuoDemo, JsError> {
        Self::create(seed, label_fraction, noise_level).map_err(js)
    }

    /// Runs `count` alternating updates; returns the latest
    /// `[total, supervised, agreement, adversarial, critic]` losses.
    pub fn step(&mut self, count: usize) -> std::result::Result<Vec<f64>, JsError> {
        for _ in 0..count {
            self.advance().map_err(js)?;
        }
        Ok(self.last.clone())
    }

    #[wasm_bindgen(getter)]
    pub fn seg_steps(&self) -> f64 {
        self.state.seg_steps as f64
    }

    #[wasm_bindgen(getter)]
    pub fn resolution(&self) -> usize {
        DEMO_RES
    }

    #[wasm_bindgen(getter)]
    pub fn test_len(&self) -> usize {
        self.split.test.len()
    }

    #[wasm_bindgen(getter)]
    pub fn labeled_len(&self) -> usize {
        self.split.train_labeled.len()
    }

    pub fn test_dsc(&self) -> std::result::Result<f64, JsError> {
        self.test_dsc_percent().map_err(js)
    }

    pub fn panel(&self, index: usize) -> std::result::Result<Vec<f32>, JsError> {
        self.panel_maps(index).map_err(js)
    }
}
