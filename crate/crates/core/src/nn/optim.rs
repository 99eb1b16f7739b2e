//! Adam with decoupled weight decay, plus the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::nn::param::ParamStore;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state, one moment pair per registered parameter.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        AdamW {
            config,
            step: 0,
            first: store.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            second: store.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    /// Applies one update with learning rate `lr` using the accumulated grads.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = lit::<T>(c.beta1);
        let b2 = lit::<T>(c.beta2);
        let one = T::one();
        let bc1 = lit::<T>(1.0 - c.beta1.powi(t));
        let bc2 = lit::<T>(1.0 - c.beta2.powi(t));
        let eps = lit::<T>(c.eps);
        let lr_t = lit::<T>(lr);
        let shrink = lit::<T>(1.0 - lr * c.weight_decay);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let decay = p.decay && c.weight_decay != 0.0;
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if decay {
                    p.value[i] = p.value[i] * shrink;
                }
                p.value[i] -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Cosine decay from `base` to `min(floor, base)` over `total` steps.
pub fn cosine_lr(base: f64, floor: f64, step: usize, total: usize) -> f64 {
    let floor = floor.min(base);
    if total <= 1 {
        return base;
    }
    let progress = (step as f64 / (total - 1) as f64).min(1.0);
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}
