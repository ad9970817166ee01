//! Adam with exponentially decaying learning rate.

use std::collections::BTreeMap;

use super::store::ParamStore;
use crate::{Error, Result};

/// Base learning rate; decays by 10x every 250k steps.
pub const BASE_LR: f64 = 5e-4;
pub const DECAY_FACTOR: f64 = 0.1;
pub const DECAY_STEPS: f64 = 250_000.0;

/// Continuous exponential decay: `base · 0.1^(step / 250000)`.
pub fn lr_schedule(step: u64) -> f64 {
    scheduled_lr(step, BASE_LR, DECAY_FACTOR, DECAY_STEPS)
}

pub fn scheduled_lr(step: u64, base: f64, factor: f64, steps: f64) -> f64 {
    base * factor.powf(step as f64 / steps)
}

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_factor: f64,
    pub decay_steps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            base_lr: BASE_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_factor: DECAY_FACTOR,
            decay_steps: DECAY_STEPS,
        }
    }
}

impl AdamParams {
    pub fn with_lr(base_lr: f64) -> Self {
        AdamParams {
            base_lr,
            ..Default::default()
        }
    }
}

/// Optimizer state: step counter plus per-block moment buffers,
/// zero-initialized on first contact with a block.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub hyper: AdamParams,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(hyper: AdamParams) -> Self {
        AdamState {
            hyper,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn current_lr(&self) -> f64 {
        scheduled_lr(
            self.step,
            self.hyper.base_lr,
            self.hyper.decay_factor,
            self.hyper.decay_steps,
        )
    }

    /// One update over every trainable block using the gradients currently
    /// held by the store. Single-writer; increments the step counter.
    pub fn apply(&mut self, store: &mut ParamStore) -> Result<()> {
        let lr = self.current_lr();
        let t = (self.step + 1) as f64;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powf(t);
        let bc2 = 1.0 - h.beta2.powf(t);
        for (name, block) in store.iter_mut() {
            if !block.trainable() {
                continue;
            }
            if !block.grad().iter().all(|g| g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for block `{name}`"
                )));
            }
            let n = block.grad().len();
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            let (values, grads) = block.values_grad_mut();
            for i in 0..n {
                let g = grads[i];
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}
