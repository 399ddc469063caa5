//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 1e-2, momentum: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            alpha: 0.99,
            eps: 1e-8,
        }
    }
}

/// SGD with heavy-ball momentum: `v ← μv + g; θ ← θ - lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    pub velocity: Vec<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig, n: usize) -> Self {
        Self {
            config,
            velocity: vec![T::zero(); n],
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        let lr = T::lit(self.config.lr);
        let mu = T::lit(self.config.momentum);
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

/// RMSProp without momentum or centering.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    pub square_avg: Vec<T>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(config: RmsPropConfig, n: usize) -> Self {
        Self {
            config,
            square_avg: vec![T::zero(); n],
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        let lr = T::lit(self.config.lr);
        let alpha = T::lit(self.config.alpha);
        let eps = T::lit(self.config.eps);
        for ((p, s), &g) in params.iter_mut().zip(&mut self.square_avg).zip(grads) {
            *s = alpha * *s + (T::one() - alpha) * g * g;
            *p -= lr * g / (s.sqrt() + eps);
        }
    }
}

/// `teacher ← decay·teacher + (1 - decay)·student`.
pub fn ema_update<T: Scalar>(teacher: &mut [T], student: &[T], decay: f64) {
    let d = T::lit(decay);
    let e = T::one() - d;
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = d * *t + e * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_scalar_example() {
        let mut t = [1.0f64];
        ema_update(&mut t, &[0.0], 0.99);
        assert!((t[0] - 0.99).abs() < 1e-15);
        ema_update(&mut t, &[0.25], 0.0);
        assert_eq!(t[0], 0.25);
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut opt = Sgd::<f64>::new(SgdConfig { lr: 0.5, momentum: 0.0 }, 2);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[2.0, 4.0]);
        assert_eq!(p, [0.0, -3.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = Sgd::<f64>::new(SgdConfig { lr: 1.0, momentum: 0.5 }, 1);
        let mut p = [0.0];
        opt.step(&mut p, &[1.0]);
        opt.step(&mut p, &[1.0]);
        assert_eq!(p[0], -2.5);
    }

    #[test]
    fn rmsprop_first_step_is_normalized() {
        let cfg = RmsPropConfig {
            lr: 0.1,
            alpha: 0.99,
            eps: 0.0,
        };
        let mut opt = RmsProp::<f64>::new(cfg, 1);
        let mut p = [0.0];
        opt.step(&mut p, &[3.0]);
        // s = 0.01·9, step = 0.1·3/0.3
        assert!((p[0] + 1.0).abs() < 1e-12);
    }
}
