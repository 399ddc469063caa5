use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, SupervisedWeights};
use crate::nn::{CriticConfig, SegNetConfig};
use crate::optim::{RmsPropConfig, SgdConfig};

/// Training method, including ablations of the dual-view objective and baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DuoSegnet,
    NoCritic,
    NoUnlabeled,
    SingleNet,
    SupervisedOnly,
    MeanTeacher,
    PseudoLabel,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::DuoSegnet,
        Mode::NoCritic,
        Mode::NoUnlabeled,
        Mode::SingleNet,
        Mode::SupervisedOnly,
        Mode::MeanTeacher,
        Mode::PseudoLabel,
    ];

    pub const NAMES: [&'static str; 7] = [
        "duo_segnet",
        "no_critic",
        "no_unlabeled",
        "single_net",
        "supervised_only",
        "mean_teacher",
        "pseudo_label",
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES[Self::ALL.iter().position(|&m| m == self).expect("listed")]
    }

    pub fn has_second_net(self) -> bool {
        matches!(self, Mode::DuoSegnet | Mode::NoCritic | Mode::NoUnlabeled)
    }

    pub fn has_critic(self) -> bool {
        matches!(self, Mode::DuoSegnet | Mode::NoUnlabeled | Mode::SingleNet)
    }

    pub fn uses_unlabeled(self) -> bool {
        !matches!(self, Mode::NoUnlabeled | Mode::SupervisedOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::NAMES
            .iter()
            .position(|&n| n == s)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::config("mode", format!("unknown mode {s:?}; valid modes: {}", Self::NAMES.join(", "))))
    }
}

/// Which network produces test-time predictions in two-network modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceView {
    #[default]
    F1,
    F2,
    Average,
}

/// Every hyper-parameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None`: one pass over the training pool, `ceil(|train| / batch_size)`
    pub batches_per_epoch: Option<usize>,
    pub k_s: usize,
    pub k_c: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub label_fraction: f64,
    pub weights: LossWeights,
    pub supervised: SupervisedWeights,
    pub seg_optimizer: SgdConfig,
    pub critic_optimizer: RmsPropConfig,
    pub segnet: SegNetConfig,
    pub critic: CriticConfig,
    pub confidence_weighted_agreement: bool,
    pub detach_agreement_targets: bool,
    pub inference: InferenceView,
    pub ema_decay: f64,
    pub pseudo_threshold: f64,
    /// fraction of epochs over which the pseudo-label weight ramps from 0
    pub pseudo_ramp_fraction: f64,
    /// weight reached at the end of the ramp
    pub pseudo_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::DuoSegnet,
            epochs: 30,
            batch_size: 4,
            batches_per_epoch: None,
            k_s: 1,
            k_c: 1,
            seed: 0,
            train_fraction: 0.8,
            label_fraction: 0.05,
            weights: LossWeights::default(),
            supervised: SupervisedWeights::default(),
            seg_optimizer: SgdConfig::default(),
            critic_optimizer: RmsPropConfig::default(),
            segnet: SegNetConfig::default(),
            critic: CriticConfig::default(),
            confidence_weighted_agreement: false,
            detach_agreement_targets: false,
            inference: InferenceView::F1,
            ema_decay: 0.99,
            pseudo_threshold: 0.5,
            pseudo_ramp_fraction: 0.2,
            pseudo_weight: 1.0,
        }
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::config(field, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn in_range(field: &str, v: f64, lo: f64, hi: f64, hi_inclusive: bool) -> Result<()> {
    let ok = v >= lo && (v < hi || (hi_inclusive && v == hi));
    if ok {
        Ok(())
    } else {
        let close = if hi_inclusive { ']' } else { ')' };
        Err(Error::config(field, format!("{v} is outside [{lo}, {hi}{close}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("epochs", self.epochs)?;
        positive("batch_size", self.batch_size)?;
        positive("k_s", self.k_s)?;
        positive("k_c", self.k_c)?;
        if let Some(b) = self.batches_per_epoch {
            positive("batches_per_epoch", b)?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::config("label_fraction", "must lie in (0, 1]"));
        }
        self.weights.validate()?;
        for (f, v) in [("supervised.ce", self.supervised.ce), ("supervised.dice", self.supervised.dice)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(f, "must be finite and non-negative"));
            }
        }
        if !(self.seg_optimizer.lr > 0.0 && self.seg_optimizer.lr.is_finite()) {
            return Err(Error::config("seg_optimizer.lr", "must be positive"));
        }
        in_range("seg_optimizer.momentum", self.seg_optimizer.momentum, 0.0, 1.0, false)?;
        if !(self.critic_optimizer.lr > 0.0 && self.critic_optimizer.lr.is_finite()) {
            return Err(Error::config("critic_optimizer.lr", "must be positive"));
        }
        in_range("critic_optimizer.alpha", self.critic_optimizer.alpha, 0.0, 1.0, false)?;
        if !(self.critic_optimizer.eps > 0.0) {
            return Err(Error::config("critic_optimizer.eps", "must be positive"));
        }
        self.segnet.unet()?;
        self.critic.unet()?;
        in_range("ema_decay", self.ema_decay, 0.0, 1.0, true)?;
        in_range("pseudo_threshold", self.pseudo_threshold, 0.0, 1.0, false)?;
        in_range("pseudo_ramp_fraction", self.pseudo_ramp_fraction, 0.0, 1.0, true)?;
        if !(self.pseudo_weight >= 0.0 && self.pseudo_weight.is_finite()) {
            return Err(Error::config("pseudo_weight", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Spatial size that images must be divisible by for both networks.
    pub fn spatial_multiple(&self) -> usize {
        (1usize << self.segnet.depth).max(1 << self.critic.depth)
    }

    /// Pseudo-label weight during `epoch` (0-based).
    pub fn pseudo_weight_at(&self, epoch: usize) -> f64 {
        let ramp = self.pseudo_ramp_fraction * self.epochs as f64;
        if ramp <= 0.0 {
            self.pseudo_weight
        } else {
            self.pseudo_weight * (epoch as f64 / ramp).min(1.0)
        }
    }
}
