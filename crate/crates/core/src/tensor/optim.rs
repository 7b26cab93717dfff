use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::ParamStore;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    /// Moments shaped after `params`, with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the parameters' grad fields, in place.
    ///
    /// All gradients are checked before anything is written, so a
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("adam_step", &[self.m.len()], &[params.len()]));
        }
        for ((name, p), m) in params.iter().zip(&self.m) {
            let g = p.grad().ok_or_else(|| Error::config(format!("parameter `{name}` has no gradient")))?;
            if g.len() != m.len() {
                return Err(Error::shape("adam_step", &[m.len()], p.shape()));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what: format!("gradient of `{name}`"), step: self.step as usize });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((_, p), m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate rising linearly from 0 to `target` over `warmup_steps`,
/// constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupSchedule {
    pub target: f64,
    pub warmup_steps: usize,
}

impl WarmupSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.target
        } else {
            self.target * step as f64 / self.warmup_steps as f64
        }
    }
}
