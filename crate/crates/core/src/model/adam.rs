use serde::{Deserialize, Serialize};

use super::params::Weights;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear decay from `start` at step 0 to `end` at step `total_steps - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            start: lr,
            end: lr,
            total_steps: 1,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.total_steps <= 1 {
            return self.start;
        }
        let last = self.total_steps - 1;
        let frac = step.min(last) as f64 / last as f64;
        if step >= last {
            return self.end;
        }
        self.start + (self.end - self.start) * frac
    }
}

/// Adam moments plus the training hyperparameters they belong to.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Weights,
    pub v: Weights,
    /// Steps taken so far.
    pub step: u64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl OptimizerState {
    pub fn new(like: &Weights, schedule: LrSchedule, weight_decay: f64, batch_size: usize) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
            schedule,
            weight_decay,
            batch_size,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.step)
    }
}

/// One bias-corrected Adam update with decoupled weight decay on a flat tensor.
///
/// `t` is the 1-based step number.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    weight_decay: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * params[i]);
    }
}

/// Applies one step to every tensor and advances the schedule.
pub fn adam_step(weights: &mut Weights, grads: &Weights, state: &mut OptimizerState) {
    let lr = state.current_lr();
    state.step += 1;
    let t = state.step;
    let wd = state.weight_decay;
    for (((p, g), m), v) in weights
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.m.slices_mut())
        .zip(state.v.slices_mut())
    {
        adam_update(p, g, m, v, t, lr, wd);
    }
}
