//! Adam with weight decay added to the gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::{ParamStore, Parameter};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }
}

/// Moment estimates for one tensor. `steps` counts the updates this tensor
/// has received, so tensors that start training late get a fresh bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u32,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_step(cfg: &AdamConfig, theta: &mut [f64], grad: &[f64], state: &mut Moments, lr: f64) {
    state.steps += 1;
    let c1 = 1.0 - math::powi(cfg.beta1, state.steps);
    let c2 = 1.0 - math::powi(cfg.beta2, state.steps);
    for i in 0..theta.len() {
        let g = grad[i] + cfg.weight_decay * theta[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
    }
}

/// Optimizer state for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self { config, moments: store.params().iter().map(|p| Moments::new(p.tensor.numel())).collect() }
    }

    /// Updates every parameter for which `frozen` is false, using its stored gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, frozen: impl Fn(&Parameter) -> bool) {
        for (p, state) in store.params_mut().iter_mut().zip(&mut self.moments) {
            if frozen(p) {
                continue;
            }
            let grad = match p.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.tensor.numel()],
            };
            adam_step(&self.config, p.tensor.data_mut(), &grad, state, lr);
        }
    }
}
