use serde::{Deserialize, Serialize};

use super::{Network, ParamGradient};
use crate::error::{MeshError, Result};

/// Step decay: `base * decay^floor(t / interval)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    pub interval: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base: 1e-3, decay: 0.9, interval: 1000 }
    }
}

impl LrSchedule {
    pub fn at(&self, t: u64) -> f64 {
        self.base * self.decay.powi((t / self.interval.max(1)) as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl AdamState {
    pub fn new(n: usize, schedule: LrSchedule) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
        }
    }

    /// Learning rate the next step will use.
    pub fn lr(&self) -> f64 {
        self.schedule.at(self.t)
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(MeshError::ShapeMismatch(format!(
                "Adam state holds {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        let lr = self.lr();
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, net: &mut Network, grad: &ParamGradient) -> Result<()> {
    state.step(net.params_mut(), &grad.values)
}
