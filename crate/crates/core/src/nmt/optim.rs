//! Inverse-square-root learning-rate schedule and Adam.

use serde::{Deserialize, Serialize};

use crate::nmt::params::TransformerParams;

/// `D^-0.5 * min(step^-0.5, step * warmup^-1.5)`, with `step >= 1`.
pub fn lr_schedule(step: usize, d_model: usize, warmup: usize) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    (d_model as f64).powf(-0.5) * step.powf(-0.5).min(step * warmup.powf(-1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: TransformerParams,
    pub v: TransformerParams,
    pub step: usize,
}

impl AdamState {
    pub fn new(params: &TransformerParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step(params: &mut TransformerParams, grads: &TransformerParams, config: &AdamConfig, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let grads = grads.tensors();
    let mut m = state.m.tensors_mut();
    let mut v = state.v.tensors_mut();
    for (((_, p), g), ((_, m), (_, v))) in params.tensors_mut().into_iter().zip(&grads).zip(m.iter_mut().zip(v.iter_mut())) {
        for i in 0..p.len() {
            let gi = g.data[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + config.eps);
        }
    }
}
