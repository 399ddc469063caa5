use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batches::{Cycler, CyclerState};
use super::config::{InferenceView, Mode, TrainConfig};
use crate::data::{image_batch, mask_batch, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    adv_loss_for_seg, adv_loss_labeled_for_critic, agreement_loss, mse_consistency, supervised_loss, total_seg_loss,
    AgreementOptions, LossBreakdown,
};
use crate::nn::{GradRequest, UNet};
use crate::optim::{ema_update, RmsProp, Sgd};
use crate::tensor::{ImageBatch, MapBatch};

const SEED_F1: u64 = 101;
const SEED_F2: u64 = 102;
const SEED_CRITIC: u64 = 103;

/// Independent 64-bit seed for component `tag` of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag);
    r.next_u64()
}

#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub images: ImageBatch<f32>,
    pub masks: MapBatch<f32>,
}

impl LabeledBatch {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        Ok(Self {
            images: image_batch(samples.iter().map(|s| &s.image))?,
            masks: mask_batch(samples.iter().map(|s| &s.mask))?,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        Ok(Self {
            images: ImageBatch::concat(&[&a.images, &b.images])?,
            masks: MapBatch::concat(&[&a.masks, &b.masks])?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct UnlabeledBatch {
    pub images: ImageBatch<f32>,
    /// thresholded predictions, used by the pseudo-label baseline only
    pub pseudo_masks: Option<MapBatch<f32>>,
}

/// Networks of a run. Which ones exist depends on the mode.
#[derive(Clone, Debug)]
pub struct Models {
    pub f1: UNet<f32>,
    pub f2: Option<UNet<f32>>,
    pub critic: Option<UNet<f32>>,
    /// EMA of `f1`, mean-teacher baseline only
    pub teacher: Option<UNet<f32>>,
}

impl Models {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let seg = cfg.segnet.unet()?;
        let f1 = UNet::new(seg, derive_seed(cfg.seed, SEED_F1))?;
        let f2 = if cfg.mode.has_second_net() {
            Some(UNet::new(seg, derive_seed(cfg.seed, SEED_F2))?)
        } else {
            None
        };
        let critic = if cfg.mode.has_critic() {
            Some(UNet::new(cfg.critic.unet()?, derive_seed(cfg.seed, SEED_CRITIC))?)
        } else {
            None
        };
        let teacher = (cfg.mode == Mode::MeanTeacher).then(|| f1.clone());
        Ok(Self {
            f1,
            f2,
            critic,
            teacher,
        })
    }

    /// Test-time prediction: the teacher when present, otherwise the configured view.
    pub fn predict(&self, view: InferenceView, batch: &ImageBatch<f32>) -> Result<MapBatch<f32>> {
        if let Some(t) = &self.teacher {
            return t.predict(batch);
        }
        match (view, &self.f2) {
            (InferenceView::F2, Some(f2)) => f2.predict(batch),
            (InferenceView::Average, Some(f2)) => {
                let mut a = self.f1.predict(batch)?;
                let b = f2.predict(batch)?;
                for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x = 0.5 * (*x + y);
                }
                Ok(a)
            }
            _ => self.f1.predict(batch),
        }
    }
}

/// Parameters, optimizer states and counters of a run in progress.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub models: Models,
    pub opt1: Sgd<f32>,
    pub opt2: Option<Sgd<f32>>,
    pub critic_opt: Option<RmsProp<f32>>,
    /// completed epochs
    pub epoch: usize,
    pub seg_steps: u64,
    pub critic_steps: u64,
    pub best_test_dsc: f64,
    pub best_epoch: Option<usize>,
    /// current weight of the pseudo-label term
    pub pseudo_weight: f64,
    pub(crate) sampler: Option<Sampler>,
}

/// Batch index streams of a run: one per labeled view and one for the unlabeled pool.
#[derive(Clone, Debug)]
pub(crate) struct Sampler {
    pub view1: Cycler,
    pub view2: Cycler,
    pub unlabeled: Cycler,
}

fn add_scaled(dst: &mut [f32], src: &[f32], scale: f64) {
    let s = scale as f32;
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

fn with_unlabeled(labeled: &ImageBatch<f32>, unlabeled: Option<&ImageBatch<f32>>) -> Result<ImageBatch<f32>> {
    match unlabeled {
        Some(u) => ImageBatch::concat(&[labeled, u]),
        None => Ok(labeled.clone()),
    }
}

/// Back-propagates `dconf` (gradient w.r.t. ψ's output) to ψ's input maps.
fn critic_input_grad(critic: &UNet<f32>, maps: &MapBatch<f32>, scale: f64) -> Result<(f64, Vec<f32>)> {
    let (conf, cache) = critic.forward(&ImageBatch::from_maps(maps))?;
    let adv = adv_loss_for_seg(&conf)?;
    if scale == 0.0 {
        return Ok((adv.value, vec![0.0; maps.data().len()]));
    }
    let mut dconf = adv.grad;
    dconf.data_mut().iter_mut().for_each(|g| *g *= scale as f32);
    let grads = critic.backward(&cache, &dconf, GradRequest::INPUT)?;
    Ok((adv.value, grads.input.expect("input gradient requested").data().to_vec()))
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let models = Models::new(&config)?;
        let opt1 = Sgd::new(config.seg_optimizer, models.f1.num_params());
        let opt2 = models.f2.as_ref().map(|f| Sgd::new(config.seg_optimizer, f.num_params()));
        let critic_opt = models
            .critic
            .as_ref()
            .map(|c| RmsProp::new(config.critic_optimizer, c.num_params()));
        Ok(Self {
            config,
            models,
            opt1,
            opt2,
            critic_opt,
            epoch: 0,
            seg_steps: 0,
            critic_steps: 0,
            best_test_dsc: f64::NEG_INFINITY,
            best_epoch: None,
            pseudo_weight: 0.0,
            sampler: None,
        })
    }

    /// Number of unlabeled batches drawn so far.
    pub fn unlabeled_draws(&self) -> u64 {
        self.sampler.as_ref().map_or(0, |s| s.unlabeled.draws)
    }

    /// Positions of the view-1, view-2 and unlabeled batch streams, once `fit` has started.
    pub fn sampler_states(&self) -> Option<[CyclerState; 3]> {
        self.sampler
            .as_ref()
            .map(|s| [s.view1.snapshot(), s.view2.snapshot(), s.unlabeled.snapshot()])
    }

    pub fn restore_sampler(&mut self, states: &[CyclerState; 3]) {
        self.sampler = Some(Sampler {
            view1: Cycler::from_snapshot(&states[0]),
            view2: Cycler::from_snapshot(&states[1]),
            unlabeled: Cycler::from_snapshot(&states[2]),
        });
    }

    fn non_finite(&self, what: &str) -> Error {
        Error::NonFinite {
            what: what.into(),
            seg_step: self.seg_steps,
            critic_step: self.critic_steps,
        }
    }

    fn check_grads(&self, g: &[f32], what: &str) -> Result<()> {
        if g.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(self.non_finite(what))
        }
    }

    /// One descent step on the segmentation objective; the critic is read-only.
    ///
    /// `unlabeled` is ignored by modes that do not use unlabeled data.
    pub fn train_step_seg(
        &mut self,
        view1: &LabeledBatch,
        view2: &LabeledBatch,
        unlabeled: Option<&UnlabeledBatch>,
    ) -> Result<LossBreakdown> {
        let unlabeled = unlabeled.filter(|u| self.config.mode.uses_unlabeled() && !u.images.is_empty());
        let breakdown = if self.config.mode.has_second_net() {
            self.two_net_step(view1, view2, unlabeled)?
        } else {
            self.one_net_step(view1, view2, unlabeled)?
        };
        self.seg_steps += 1;
        Ok(breakdown)
    }

    fn two_net_step(
        &mut self,
        v1: &LabeledBatch,
        v2: &LabeledBatch,
        unlabeled: Option<&UnlabeledBatch>,
    ) -> Result<LossBreakdown> {
        let cfg = &self.config;
        let w = cfg.weights;
        let f1 = &self.models.f1;
        let f2 = self.models.f2.as_ref().expect("two-network mode");
        let u = unlabeled.map(|u| &u.images);
        let (b1, b2) = (v1.len(), v2.len());
        let (p1, cache1) = f1.forward(&with_unlabeled(&v1.images, u)?)?;
        let (p2, cache2) = f2.forward(&with_unlabeled(&v2.images, u)?)?;
        let hw = p1.pixels();

        let (s1, gs1) = supervised_loss(&p1.slice(0, b1), &v1.masks, cfg.supervised)?;
        let (s2, gs2) = supervised_loss(&p2.slice(0, b2), &v2.masks, cfg.supervised)?;
        let mut g1 = MapBatch::zeros(p1.len(), p1.height(), p1.width());
        let mut g2 = MapBatch::zeros(p2.len(), p2.height(), p2.width());
        add_scaled(&mut g1.data_mut()[..b1 * hw], gs1.data(), w.lambda_s);
        add_scaled(&mut g2.data_mut()[..b2 * hw], gs2.data(), w.lambda_s);

        let (mut adv1, mut adv2, mut agreement) = (0.0, 0.0, 0.0);
        if let Some(critic) = &self.models.critic {
            let fake = MapBatch::concat(&[&p1.slice(0, b1), &p2.slice(0, b2)])?;
            let (value, dx) = critic_input_grad(critic, &fake, w.lambda_c)?;
            adv1 = value;
            add_scaled(&mut g1.data_mut()[..b1 * hw], &dx[..b1 * hw], 1.0);
            add_scaled(&mut g2.data_mut()[..b2 * hw], &dx[b1 * hw..], 1.0);
        }
        if let Some(u) = u {
            let nu = u.len();
            let (p1u, p2u) = (p1.slice(b1, nu), p2.slice(b2, nu));
            let mut confidence = None;
            if let Some(critic) = &self.models.critic {
                let fake = MapBatch::concat(&[&p1u, &p2u])?;
                let (value, dx) = critic_input_grad(critic, &fake, w.lambda_c)?;
                adv2 = value;
                add_scaled(&mut g1.data_mut()[b1 * hw..], &dx[..nu * hw], 1.0);
                add_scaled(&mut g2.data_mut()[b2 * hw..], &dx[nu * hw..], 1.0);
                if cfg.confidence_weighted_agreement {
                    let conf = critic.predict(&ImageBatch::from_maps(&fake))?;
                    confidence = Some((conf.slice(0, nu), conf.slice(nu, nu)));
                }
            }
            let ag = agreement_loss(
                &p1u,
                &p2u,
                AgreementOptions {
                    detach_targets: cfg.detach_agreement_targets,
                    confidence: confidence.as_ref().map(|(a, b)| (a, b)),
                },
            )?;
            agreement = ag.value;
            add_scaled(&mut g1.data_mut()[b1 * hw..], ag.grad1.data(), w.lambda_u);
            add_scaled(&mut g2.data_mut()[b2 * hw..], ag.grad2.data(), w.lambda_u);
        }

        let breakdown = total_seg_loss(&w, s1 + s2, agreement, adv1, adv2);
        if !breakdown.total.is_finite() {
            return Err(self.non_finite("segmentation loss"));
        }
        let gp1 = f1.backward(&cache1, &g1, GradRequest::PARAMS)?.params.expect("params");
        let gp2 = f2.backward(&cache2, &g2, GradRequest::PARAMS)?.params.expect("params");
        self.check_grads(&gp1, "F1 gradient")?;
        self.check_grads(&gp2, "F2 gradient")?;
        self.opt1.step(self.models.f1.params_mut(), &gp1);
        let f2 = self.models.f2.as_mut().expect("two-network mode");
        self.opt2.as_mut().expect("two-network mode").step(f2.params_mut(), &gp2);
        Ok(breakdown)
    }

    fn one_net_step(
        &mut self,
        v1: &LabeledBatch,
        v2: &LabeledBatch,
        unlabeled: Option<&UnlabeledBatch>,
    ) -> Result<LossBreakdown> {
        let cfg = &self.config;
        let mode = cfg.mode;
        let mut weights = cfg.weights;
        // the ramped pseudo-label weight takes the place of λ_u
        if mode == Mode::PseudoLabel {
            weights.lambda_u = self.pseudo_weight;
        }
        let unlabeled = match mode {
            Mode::PseudoLabel if self.pseudo_weight == 0.0 => None,
            _ => unlabeled,
        };
        let labeled = LabeledBatch::concat(v1, v2)?;
        let bl = labeled.len();
        let f1 = &self.models.f1;
        let (p, cache) = f1.forward(&with_unlabeled(&labeled.images, unlabeled.map(|u| &u.images))?)?;
        let hw = p.pixels();
        let pl = p.slice(0, bl);
        let (sup, gs) = supervised_loss(&pl, &labeled.masks, cfg.supervised)?;
        let mut g = MapBatch::zeros(p.len(), p.height(), p.width());
        add_scaled(&mut g.data_mut()[..bl * hw], gs.data(), weights.lambda_s);

        let (mut adv1, mut adv2, mut unsup) = (0.0, 0.0, 0.0);
        if let Some(critic) = &self.models.critic {
            let (value, dx) = critic_input_grad(critic, &pl, weights.lambda_c)?;
            adv1 = value;
            add_scaled(&mut g.data_mut()[..bl * hw], &dx, 1.0);
        }
        if let Some(u) = unlabeled {
            let nu = u.images.len();
            let pu = p.slice(bl, nu);
            let gu = &mut g.data_mut()[bl * hw..];
            match mode {
                Mode::SingleNet => {
                    let critic = self.models.critic.as_ref().expect("single_net has a critic");
                    let (value, dx) = critic_input_grad(critic, &pu, weights.lambda_c)?;
                    adv2 = value;
                    add_scaled(gu, &dx, 1.0);
                }
                Mode::MeanTeacher => {
                    let teacher = self.models.teacher.as_ref().expect("mean_teacher has a teacher");
                    let target = teacher.predict(&u.images)?;
                    let c = mse_consistency(&pu, &target)?;
                    unsup = c.value;
                    add_scaled(gu, c.grad.data(), weights.lambda_u);
                }
                Mode::PseudoLabel => {
                    let pseudo = u
                        .pseudo_masks
                        .as_ref()
                        .ok_or_else(|| Error::config("pseudo_label", "unlabeled batch has no pseudo masks"))?;
                    let (value, gp) = supervised_loss(&pu, pseudo, cfg.supervised)?;
                    unsup = value.total;
                    add_scaled(gu, gp.data(), weights.lambda_u);
                }
                _ => {}
            }
        }
        let breakdown = total_seg_loss(&weights, sup, unsup, adv1, adv2);
        if !breakdown.total.is_finite() {
            return Err(self.non_finite("segmentation loss"));
        }
        let gp = f1.backward(&cache, &g, GradRequest::PARAMS)?.params.expect("params");
        self.check_grads(&gp, "F1 gradient")?;
        self.opt1.step(self.models.f1.params_mut(), &gp);
        if let Some(t) = self.models.teacher.as_mut() {
            ema_update(t.params_mut(), self.models.f1.params(), self.config.ema_decay);
        }
        Ok(breakdown)
    }

    /// One descent step of the critic on ground truth vs detached labeled
    /// predictions. Returns `None` (and changes nothing) in modes without a critic.
    pub fn train_step_critic(&mut self, view1: &LabeledBatch, view2: &LabeledBatch) -> Result<Option<f64>> {
        let Some(critic) = &self.models.critic else {
            return Ok(None);
        };
        let (real, fake) = match &self.models.f2 {
            Some(f2) => (
                MapBatch::concat(&[&view1.masks, &view2.masks])?,
                MapBatch::concat(&[&self.models.f1.predict(&view1.images)?, &f2.predict(&view2.images)?])?,
            ),
            None => {
                let labeled = LabeledBatch::concat(view1, view2)?;
                let fake = self.models.f1.predict(&labeled.images)?;
                (labeled.masks, fake)
            }
        };
        let value = critic_fit_step(critic, &real, &fake).and_then(|(value, grads)| {
            if value.is_finite() && grads.iter().all(|g| g.is_finite()) {
                Ok((value, grads))
            } else {
                Err(self.non_finite("critic loss"))
            }
        });
        let (value, grads) = value.map_err(|e| match e {
            Error::NonFiniteOutput(_) => self.non_finite("critic loss"),
            e => e,
        })?;
        let critic = self.models.critic.as_mut().expect("checked above");
        self.critic_opt
            .as_mut()
            .expect("critic has an optimizer")
            .step(critic.params_mut(), &grads);
        self.critic_steps += 1;
        Ok(Some(value))
    }
}

/// Critic loss on `(real, fake)` and its parameter gradient.
pub fn critic_fit_step(critic: &UNet<f32>, real: &MapBatch<f32>, fake: &MapBatch<f32>) -> Result<(f64, Vec<f32>)> {
    let both = MapBatch::concat(&[real, fake])?;
    let (conf, cache) = critic.forward(&ImageBatch::from_maps(&both))?;
    let nr = real.len();
    let loss = adv_loss_labeled_for_critic(&conf.slice(0, nr), &conf.slice(nr, fake.len()))?;
    let dconf = MapBatch::concat(&[&loss.grad_real, &loss.grad_fake])?;
    let grads = critic.backward(&cache, &dconf, GradRequest::PARAMS)?;
    Ok((loss.value, grads.params.expect("params requested")))
}
