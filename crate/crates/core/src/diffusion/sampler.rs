use alloc::vec::Vec;

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nets::EpsPredictor;
use crate::tensor::{seeded_rng, SeededRng};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub eta: f64,
    pub guidance: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 25, eta: 0.0, guidance: 1.5, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if self.steps == 0 || self.steps > timesteps {
            return Err(Error::config(alloc::format!("sampler steps must lie in 1..={timesteps}, got {}", self.steps)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config(alloc::format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return Err(Error::config(alloc::format!(
                "guidance scale must be finite and non-negative, got {}",
                self.guidance
            )));
        }
        Ok(())
    }
}

/// Guided noise estimate `(1 − s)·ε̂_∅ + s·ε̂_f`.
pub fn cfg_predict(model: &impl EpsPredictor, z_t: &Tensor, t: usize, f: &Tensor, scale: f64) -> Result<Tensor> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::config(alloc::format!("guidance scale must be non-negative, got {scale}")));
    }
    if scale == 1.0 {
        return model.predict_eps(z_t, t, Some(f));
    }
    let null = model.predict_eps(z_t, t, None)?;
    if scale == 0.0 {
        return Ok(null);
    }
    let cond = model.predict_eps(z_t, t, Some(f))?;
    let data = null.data().iter().zip(cond.data()).map(|(n, c)| (1.0 - scale) * n + scale * c).collect();
    Tensor::new(null.shape(), data)
}

/// Descending timesteps `1 + k·⌊T/steps⌋`, `k = steps−1, …, 0`.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > timesteps {
        return Err(Error::config(alloc::format!("sampler steps must lie in 1..={timesteps}, got {steps}")));
    }
    let stride = timesteps / steps;
    Ok((0..steps).rev().map(|k| 1 + k * stride).collect())
}

/// Samples one latent per row of `f`, starting from `z_T ~ N(0, I)` drawn
/// from `cfg.seed`.
pub fn ddim_sample(
    model: &impl EpsPredictor,
    schedule: &NoiseSchedule,
    f: &Tensor,
    cfg: &SamplerConfig,
) -> Result<Tensor> {
    let mut rng = seeded_rng(cfg.seed);
    let z_t = rng.normal_sample(&[f.rows(), model.latent_dim()]);
    ddim_sample_from(model, schedule, f, z_t, cfg, &mut rng)
}

/// DDIM trajectory from a given `z_T`; `rng` is consumed only when `η > 0`.
pub fn ddim_sample_from(
    model: &impl EpsPredictor,
    schedule: &NoiseSchedule,
    f: &Tensor,
    z_t: Tensor,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    cfg.validate(schedule.steps())?;
    if z_t.rows() != f.rows() || z_t.cols() != model.latent_dim() {
        return Err(Error::shape("ddim_sample", z_t.shape(), f.shape()));
    }
    let ts = ddim_timesteps(schedule.steps(), cfg.steps)?;
    let mut z = z_t;
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let eps = cfg_predict(model, &z, t, f, cfg.guidance)?;
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t_prev);
        let sigma = cfg.eta * libm::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
        let dir = libm::sqrt((1.0 - ab_prev - sigma * sigma).max(0.0));
        let data = z
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&zt, &e)| {
                let x0 = (zt - libm::sqrt(1.0 - ab) * e) / libm::sqrt(ab);
                let mut next = libm::sqrt(ab_prev) * x0 + dir * e;
                if sigma > 0.0 {
                    next += sigma * rng.normal();
                }
                next
            })
            .collect();
        z = Tensor::new(z.shape(), data)?;
        if !z.all_finite() {
            return Err(Error::NonFinite { what: alloc::string::String::from("ddim latent"), step: i });
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::linear_beta_schedule;
    use alloc::vec;

    /// Exact noise predictor for the single-point dataset `{z*}`.
    struct PointOracle<'a> {
        schedule: &'a NoiseSchedule,
        point: Vec<f64>,
    }

    impl EpsPredictor for PointOracle<'_> {
        fn latent_dim(&self) -> usize {
            self.point.len()
        }

        fn predict_eps(&self, z_t: &Tensor, t: usize, _cond: Option<&Tensor>) -> Result<Tensor> {
            let ab = self.schedule.alpha_bar(t);
            let d = self.point.len();
            let data = z_t
                .data()
                .iter()
                .enumerate()
                .map(|(k, z)| (z - ab.sqrt() * self.point[k % d]) / (1.0 - ab).sqrt())
                .collect();
            Tensor::new(z_t.shape(), data)
        }
    }

    /// `ε̂_∅ = 0`, `ε̂_f = 1`.
    struct Split;

    impl EpsPredictor for Split {
        fn latent_dim(&self) -> usize {
            1
        }

        fn predict_eps(&self, z_t: &Tensor, _t: usize, cond: Option<&Tensor>) -> Result<Tensor> {
            Ok(Tensor::full(z_t.shape(), if cond.is_some() { 1.0 } else { 0.0 }))
        }
    }

    #[test]
    fn guidance_arithmetic() {
        let z = Tensor::zeros(&[1, 1]);
        let f = Tensor::zeros(&[1, 1]);
        assert_eq!(cfg_predict(&Split, &z, 1, &f, 2.0).unwrap().data(), &[2.0]);
        assert_eq!(cfg_predict(&Split, &z, 1, &f, 1.0).unwrap().data(), &[1.0]);
        assert_eq!(cfg_predict(&Split, &z, 1, &f, 0.0).unwrap().data(), &[0.0]);
        assert!(cfg_predict(&Split, &z, 1, &f, -0.5).is_err());
    }

    #[test]
    fn full_length_schedule_subsequence() {
        let ts = ddim_timesteps(1000, 25).unwrap();
        assert_eq!(ts.len(), 25);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(*ts.last().unwrap(), 1);
        assert!(ddim_timesteps(10, 11).is_err());
        assert_eq!(ddim_timesteps(4, 4).unwrap(), [4, 3, 2, 1]);
    }

    #[test]
    fn one_step_recovers_point() {
        let s = linear_beta_schedule(100, 1e-4, 0.02).unwrap();
        let oracle = PointOracle { schedule: &s, point: vec![0.3, -1.2, 2.0] };
        let cfg = SamplerConfig { steps: 1, guidance: 1.0, ..Default::default() };
        let f = Tensor::zeros(&[5, 1]);
        let out = ddim_sample(&oracle, &s, &f, &cfg).unwrap();
        for row in out.row_iter() {
            for (a, b) in row.iter().zip(&oracle.point) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_too_many_steps() {
        let s = linear_beta_schedule(10, 1e-4, 0.02).unwrap();
        let cfg = SamplerConfig { steps: 11, ..Default::default() };
        assert!(matches!(ddim_sample(&Split, &s, &Tensor::zeros(&[1, 1]), &cfg), Err(Error::Config(_))));
    }
}
