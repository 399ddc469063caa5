//! Loss terms of the dual-view objective.
//!
//! Every pixel sum is reduced by a mean over pixels and over the batch, so
//! magnitudes do not depend on resolution. Values are accumulated in `f64`;
//! gradients are returned in the network's element type. Probabilities are
//! clamped to `[PROB_EPS, 1 - PROB_EPS]` before any logarithm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PROB_EPS;
use crate::scalar::Scalar;
use crate::tensor::MapBatch;

/// Dice smoothing constant.
pub const DICE_SMOOTH: f64 = 1.0;

/// λ weights of the multitask objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            lambda_u: 0.3,
            lambda_c: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_u", self.lambda_u),
            ("lambda_c", self.lambda_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("weights.{name}"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Coefficients of the cross-entropy + Dice supervised loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedWeights {
    pub ce: f64,
    pub dice: f64,
}

impl Default for SupervisedWeights {
    fn default() -> Self {
        Self { ce: 1.0, dice: 1.0 }
    }
}

/// A scalar loss with its gradient w.r.t. the predicted map.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub value: f64,
    pub grad: MapBatch<T>,
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn grad_map<T: Scalar>(like: &MapBatch<T>, values: Vec<f64>) -> MapBatch<T> {
    MapBatch::new(
        like.len(),
        like.height(),
        like.width(),
        values.into_iter().map(T::lit).collect(),
    )
    .expect("gradient has input shape")
}

/// Binary cross-entropy `-mean[y·log p + (1-y)·log(1-p)]`.
///
/// `target` may hold soft values in `[0, 1]`.
pub fn ce_loss<T: Scalar>(pred: &MapBatch<T>, target: &MapBatch<T>) -> Result<LossGrad<T>> {
    pred.check_same_shape(target, "ce_loss")?;
    let n = pred.data().len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.data().len());
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let (p, y) = (clamp(p.as_f64()), y.as_f64());
        total += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push(-(y / p - (1.0 - y) / (1.0 - p)) / n);
    }
    Ok(LossGrad {
        value: -total / n,
        grad: grad_map(pred, grad),
    })
}

/// Smoothed soft Dice loss `1 - (2⟨y,p⟩ + s) / (‖y‖₁ + ‖p‖₁ + s)`, averaged over samples.
pub fn dice_loss<T: Scalar>(pred: &MapBatch<T>, target: &MapBatch<T>) -> Result<LossGrad<T>> {
    pred.check_same_shape(target, "dice_loss")?;
    let b = pred.len().max(1) as f64;
    let mut coef_sum = 0.0;
    let mut grad = Vec::with_capacity(pred.data().len());
    for i in 0..pred.len() {
        let (p, y) = (pred.map(i), target.map(i));
        let mut inter = 0.0;
        let mut mass = DICE_SMOOTH;
        for (&pv, &yv) in p.iter().zip(y) {
            let (pv, yv) = (pv.as_f64(), yv.as_f64());
            inter += pv * yv;
            mass += pv.abs() + yv.abs();
        }
        let num = 2.0 * inter + DICE_SMOOTH;
        coef_sum += num / mass;
        for &yv in y {
            let yv = yv.as_f64();
            grad.push(-(2.0 * yv * mass - num) / (mass * mass) / b);
        }
    }
    Ok(LossGrad {
        value: 1.0 - coef_sum / b,
        grad: grad_map(pred, grad),
    })
}

/// Supervised loss value with its constituents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisedValue {
    pub total: f64,
    pub ce: f64,
    pub dice: f64,
}

impl std::ops::Add for SupervisedValue {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            total: self.total + o.total,
            ce: self.ce + o.ce,
            dice: self.dice + o.dice,
        }
    }
}

/// `weights.ce · CE + weights.dice · Dice`.
pub fn supervised_loss<T: Scalar>(
    pred: &MapBatch<T>,
    target: &MapBatch<T>,
    weights: SupervisedWeights,
) -> Result<(SupervisedValue, MapBatch<T>)> {
    let ce = ce_loss(pred, target)?;
    let dice = dice_loss(pred, target)?;
    let (wc, wd) = (T::lit(weights.ce), T::lit(weights.dice));
    let mut grad = ce.grad;
    for (g, &d) in grad.data_mut().iter_mut().zip(dice.grad.data()) {
        *g = wc * *g + wd * d;
    }
    let value = SupervisedValue {
        total: weights.ce * ce.value + weights.dice * dice.value,
        ce: ce.value,
        dice: dice.value,
    };
    Ok((value, grad))
}

/// Options of the symmetric agreement loss.
#[derive(Clone, Copy, Debug, Default)]
pub struct AgreementOptions<'a, T> {
    /// Treat each side as a constant target when it plays the target role.
    pub detach_targets: bool,
    /// Critic confidences `(ψ(p1), ψ(p2))`; the term that uses `p1` as target is
    /// weighted per pixel by `ψ(p1)` normalized to mean 1, and vice versa.
    pub confidence: Option<(&'a MapBatch<T>, &'a MapBatch<T>)>,
}

#[derive(Clone, Debug)]
pub struct AgreementLoss<T> {
    pub value: f64,
    pub grad1: MapBatch<T>,
    pub grad2: MapBatch<T>,
}

fn normalized_weights<T: Scalar>(conf: Option<&MapBatch<T>>, n: usize) -> Vec<f64> {
    match conf {
        None => vec![1.0; n],
        Some(c) => {
            let mean = c.mean();
            if mean > 0.0 {
                c.data().iter().map(|v| v.as_f64() / mean).collect()
            } else {
                vec![1.0; n]
            }
        }
    }
}

/// Weighted cross-entropy of `pred` against the soft target `target`, plus
/// the per-pixel derivatives w.r.t. pred and target.
fn soft_cross<T: Scalar>(target: &[T], pred: &[T], weight: &[f64], n: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut total = 0.0;
    let mut dpred = Vec::with_capacity(pred.len());
    let mut dtarget = Vec::with_capacity(pred.len());
    for ((&q, &p), &w) in target.iter().zip(pred).zip(weight) {
        let (q, p) = (q.as_f64(), clamp(p.as_f64()));
        total += w * (q * p.ln() + (1.0 - q) * (1.0 - p).ln());
        dpred.push(-w * (q / p - (1.0 - q) / (1.0 - p)) / n);
        dtarget.push(-w * (p.ln() - (1.0 - p).ln()) / n);
    }
    (-total / n, dpred, dtarget)
}

/// Symmetric cross-entropy `½[H(p1→p2) + H(p2→p1)]` between two probability maps.
pub fn agreement_loss<T: Scalar>(
    p1: &MapBatch<T>,
    p2: &MapBatch<T>,
    opts: AgreementOptions<'_, T>,
) -> Result<AgreementLoss<T>> {
    p1.check_same_shape(p2, "agreement_loss")?;
    let len = p1.data().len();
    let n = len.max(1) as f64;
    if let Some((c1, c2)) = opts.confidence {
        c1.check_same_shape(p1, "agreement_loss confidence")?;
        c2.check_same_shape(p2, "agreement_loss confidence")?;
    }
    let w1 = normalized_weights(opts.confidence.map(|c| c.0), len);
    let w2 = normalized_weights(opts.confidence.map(|c| c.1), len);
    // p1 as target for p2, then p2 as target for p1
    let (h12, d12_p2, d12_p1) = soft_cross(p1.data(), p2.data(), &w1, n);
    let (h21, d21_p1, d21_p2) = soft_cross(p2.data(), p1.data(), &w2, n);
    let combine = |own: Vec<f64>, as_target: Vec<f64>| -> Vec<f64> {
        own.into_iter()
            .zip(as_target)
            .map(|(a, b)| 0.5 * if opts.detach_targets { a } else { a + b })
            .collect()
    };
    Ok(AgreementLoss {
        value: 0.5 * (h12 + h21),
        grad1: grad_map(p1, combine(d21_p1, d12_p1)),
        grad2: grad_map(p2, combine(d12_p2, d21_p2)),
    })
}

#[derive(Clone, Debug)]
pub struct CriticLoss<T> {
    pub value: f64,
    pub grad_real: MapBatch<T>,
    pub grad_fake: MapBatch<T>,
}

/// Critic objective on labeled data: `-mean log ψ(Y) - mean log(1 - ψ(p))`.
///
/// `real` holds ψ applied to ground-truth masks, `fake` holds ψ applied to
/// detached predictions of both views. The critic descends this value.
pub fn adv_loss_labeled_for_critic<T: Scalar>(real: &MapBatch<T>, fake: &MapBatch<T>) -> Result<CriticLoss<T>> {
    let nr = real.data().len().max(1) as f64;
    let nf = fake.data().len().max(1) as f64;
    let mut real_sum = 0.0;
    let mut grad_real = Vec::with_capacity(real.data().len());
    for &c in real.data() {
        let c = clamp(c.as_f64());
        real_sum += c.ln();
        grad_real.push(-1.0 / (nr * c));
    }
    let mut fake_sum = 0.0;
    let mut grad_fake = Vec::with_capacity(fake.data().len());
    for &c in fake.data() {
        let c = clamp(c.as_f64());
        fake_sum += (1.0 - c).ln();
        grad_fake.push(1.0 / (nf * (1.0 - c)));
    }
    let value = -real_sum / nr - fake_sum / nf;
    if !value.is_finite() {
        return Err(Error::NonFiniteOutput("critic loss".into()));
    }
    Ok(CriticLoss {
        value,
        grad_real: grad_map(real, grad_real),
        grad_fake: grad_map(fake, grad_fake),
    })
}

/// Non-saturating adversarial term for the segmentation networks: `-mean log ψ(p)`.
///
/// `conf` holds ψ applied to predictions; the gradient is w.r.t. `conf`.
pub fn adv_loss_for_seg<T: Scalar>(conf: &MapBatch<T>) -> Result<LossGrad<T>> {
    let n = conf.data().len().max(1) as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(conf.data().len());
    for &c in conf.data() {
        let c = clamp(c.as_f64());
        sum += c.ln();
        grad.push(-1.0 / (n * c));
    }
    let value = -sum / n;
    if !value.is_finite() {
        return Err(Error::NonFiniteOutput("adversarial loss".into()));
    }
    Ok(LossGrad {
        value,
        grad: grad_map(conf, grad),
    })
}

/// Mean squared difference `mean (p - t)²` with the target `t` held constant.
pub fn mse_consistency<T: Scalar>(pred: &MapBatch<T>, target: &MapBatch<T>) -> Result<LossGrad<T>> {
    pred.check_same_shape(target, "mse_consistency")?;
    let n = pred.data().len().max(1) as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.data().len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p.as_f64() - t.as_f64();
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(LossGrad {
        value: sum / n,
        grad: grad_map(pred, grad),
    })
}

/// Weighted combination of every term of one segmentation step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub critic_adv: f64,
    pub ce: f64,
    pub dice: f64,
    pub adv1: f64,
    pub adv2: f64,
}

/// `λ_s·L_s + λ_u·L_u + λ_c·(L_adv1 + L_adv2)`.
pub fn total_seg_loss(weights: &LossWeights, supervised: SupervisedValue, agreement: f64, adv1: f64, adv2: f64) -> LossBreakdown {
    let critic_adv = adv1 + adv2;
    LossBreakdown {
        total: weights.lambda_s * supervised.total + weights.lambda_u * agreement + weights.lambda_c * critic_adv,
        supervised: supervised.total,
        unsupervised: agreement,
        critic_adv,
        ce: supervised.ce,
        dice: supervised.dice,
        adv1,
        adv2,
    }
}
