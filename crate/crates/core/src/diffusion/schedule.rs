use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::Tensor;

/// Precomputed per-step quantities of a `T`-step variance schedule.
///
/// Timesteps are 1-based; `alpha_bar(0)` is 1 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_var: Vec<f64>,
    posterior_log_var: Vec<f64>,
}

/// β interpolated linearly from `beta_1` (t = 1) to `beta_t` (t = T).
pub fn linear_beta_schedule(steps: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
        return Err(Error::config(alloc::format!(
            "linear schedule requires 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_t}"
        )));
    }
    let betas = (0..steps)
        .map(|i| if steps == 1 { beta_1 } else { beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64 })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule needs at least one step"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::config("every beta must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("beta schedule must be non-decreasing"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_var: Vec<f64> = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])
            })
            .collect();
        // β̃_1 = 0; its log is replaced by log β̃_2 (or log β_1 when T = 1).
        let posterior_log_var = (0..betas.len())
            .map(|i| match i {
                0 if betas.len() > 1 => libm::log(posterior_var[1]),
                0 => libm::log(betas[0]),
                _ => libm::log(posterior_var[i]),
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars, posterior_var, posterior_log_var })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Domain { what: "timestep", value: t, min: 1, max: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t = ∏_{s ≤ t} α_s`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    /// `log β̃_t`, with the undefined `t = 1` entry clipped.
    pub fn posterior_log_variance(&self, t: usize) -> f64 {
        self.posterior_log_var[t - 1]
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0·z_0 + ct·z_t`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let c0 = self.beta(t) * libm::sqrt(ab_prev) / (1.0 - ab);
        let ct = (1.0 - ab_prev) * libm::sqrt(self.alpha(t)) / (1.0 - ab);
        (c0, ct)
    }

    /// `z_t = √ᾱ_t·z_0 + √(1−ᾱ_t)·ε`, row `i` noised to `t[i]` (or all rows
    /// to `t[0]` when a single timestep is given).
    pub fn q_sample(&self, z0: &Tensor, t: &[usize], eps: &Tensor) -> Result<Tensor> {
        if z0.shape() != eps.shape() {
            return Err(Error::shape("q_sample", z0.shape(), eps.shape()));
        }
        let rows = z0.rows();
        if t.len() != rows && t.len() != 1 {
            return Err(Error::shape("q_sample", z0.shape(), &[t.len()]));
        }
        for &ti in t {
            self.check_t(ti)?;
        }
        let c = z0.cols();
        let mut out = Vec::with_capacity(z0.numel());
        for i in 0..rows {
            let ab = self.alpha_bar(if t.len() == 1 { t[0] } else { t[i] });
            let (s, n) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
            for j in 0..c {
                out.push(s * z0.data()[i * c + j] + n * eps.data()[i * c + j]);
            }
        }
        Tensor::new(z0.shape(), out)
    }
}
