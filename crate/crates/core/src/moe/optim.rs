use super::{Params, RerankerModel};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Linear warmup to a constant peak learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
}

impl Schedule {
    /// Warms up over `ceil(fraction * total_steps)` steps.
    pub fn from_fraction(peak_lr: f64, fraction: f64, total_steps: usize) -> Self {
        Schedule {
            peak_lr,
            warmup_steps: (fraction * total_steps as f64).ceil() as usize,
        }
    }

    /// Learning rate at optimizer step `step`, counted from 1.
    pub fn lr(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.peak_lr;
        }
        self.peak_lr * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub schedule: Schedule,
    pub step: usize,
    m: Params,
    v: Params,
}

impl AdamState {
    pub fn new(params: &Params, schedule: Schedule) -> Self {
        AdamState {
            schedule,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn optimizer_step(model: &mut RerankerModel, grads: &Params, state: &mut AdamState) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite(format!("gradient at step {}", state.step + 1)));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = state.schedule.lr(state.step);
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let params = model.params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    if !model.params.all_finite() {
        return Err(Error::NonFinite(format!("parameters after step {}", state.step)));
    }
    Ok(())
}
