//! SGD with heavy-ball momentum and learning-rate schedules.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math;

/// Momentum SGD in the usual deep-learning form:
/// `v = mu * v + (g + wd * p); p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        for ((p, g), v) in params.iter_mut().zip(grad).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

/// Half-cosine decay from `base` at `step = 0` to zero at `step = total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total)) as f64 / total as f64;
    base * (1.0 + math::cos(PI * t)) / 2.0
}

/// Warm-up then cosine schedule for prompt tuning (1-based epochs).
///
/// Epoch 1 runs at `warmup`; epochs `2..=epochs` follow
/// `base * (1 + cos(pi * (t - 2) / (epochs - 2))) / 2`, which reaches zero on
/// the last epoch. With two epochs the second runs at `base`.
pub fn warmup_cosine_lr(base: f64, warmup: f64, epoch: usize, epochs: usize) -> f64 {
    if epoch <= 1 {
        warmup
    } else if epochs <= 2 {
        base
    } else {
        cosine_lr(base, epoch - 2, epochs - 2)
    }
}
