use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tape::Gradients;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.2 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let m: Vec<_> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// One AdamW update with decoupled weight decay: parameters flagged for
    /// decay shrink by `lr * weight_decay` independently of the moments.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(c.eps);
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let decay = if params.decays(id) { T::lit(1.0 - lr * c.weight_decay) } else { T::one() };
            let g = grads.get(id);
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for i in 0..p.len() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                let mi = b1 * m.data()[i] + one_b1 * gi;
                let vi = b2 * v.data()[i] + one_b2 * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = step_size * mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
                let pi = &mut p.data_mut()[i];
                *pi = *pi * decay - update;
            }
        }
    }
}

/// Linear warmup followed by cosine decay to a floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn lr_at_step(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.base_lr;
        }
        let progress = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.min_lr + (self.base_lr - self.min_lr) * 0.5 * (1.0 + (PI * progress).cos())
    }
}
