use alloc::string::String;
use alloc::vec::Vec;

use super::reparameterize;
use super::stats::{sample_conditional, Provenance, UnseenDistribution};
use crate::diffusion::{ddim_sample_from, loss_simple, DiffusionBatch, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::nets::{Autoencoder, Conditioning, Denoiser};
use crate::tensor::{seeded_rng, AdamState, ParamStore};
use crate::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 2e-4, seed: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("inversion learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("invalid inversion optimizer settings"));
        }
        Ok(())
    }
}

/// Mean support loss recorded at each inversion step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InversionReport {
    pub losses: Vec<f64>,
}

/// Refines `μ` and `log σ²` of an unseen class by minimizing the noise
/// prediction error of its supports through the frozen denoiser.
///
/// Each step visits the supports in order; every visit draws a fresh
/// timestep, noise and reparameterization noise, and applies one Adam update.
pub fn invert_optimize(
    dist: &UnseenDistribution,
    supports: &Tensor,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    autoencoder: &Autoencoder,
    cfg: &InversionConfig,
) -> Result<(UnseenDistribution, InversionReport)> {
    cfg.validate()?;
    let net = denoiser.config();
    if dist.dim() != net.feature_dim {
        return Err(Error::shape("invert_optimize", &[dist.dim()], &[net.feature_dim]));
    }
    if schedule.steps() != net.timesteps {
        return Err(Error::config("schedule length differs from the denoiser's timestep count"));
    }
    let latents = autoencoder.encode(supports)?;
    let mut params = ParamStore::new();
    params.push("mu", Tensor::matrix(1, dist.dim(), dist.mean.clone())?)?;
    params.push("log_var", Tensor::matrix(1, dist.dim(), dist.log_var.clone())?)?;
    let mut adam = AdamState::new(&params, cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.eps;
    let mut rng = seeded_rng(cfg.seed);
    let mut report = InversionReport::default();
    for step in 0..cfg.steps {
        let mut total = 0.0;
        for k in 0..latents.rows() {
            let z0 = Tensor::matrix(1, latents.cols(), latents.row(k).to_vec())?;
            let t = [rng.int_in(1, schedule.steps())];
            let eps = rng.normal_sample(&[1, latents.cols()]);
            let eps_f = rng.normal_sample(&[1, dist.dim()]);
            let mut tape = Tape::new();
            let bound = denoiser.bind_frozen(&mut tape);
            let vars = params.bind(&mut tape);
            let ef = tape.constant(eps_f);
            let f = reparameterize(&mut tape, vars[0], vars[1], ef)?;
            let batch = DiffusionBatch { z0: &z0, t: &t, eps: &eps };
            let loss = loss_simple(&mut tape, &bound, schedule, batch, &Conditioning::Features(f))?;
            let value = tape.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite { what: String::from("inversion loss"), step });
            }
            total += value;
            tape.backward(loss)?;
            params.zero_grad();
            params.collect_grads(&tape, &vars)?;
            adam.step(&mut params).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, step },
                other => other,
            })?;
        }
        report.losses.push(total / latents.rows() as f64);
    }
    let mut out = dist.clone();
    out.mean = params.get("mu").expect("present").data().to_vec();
    out.log_var = params.get("log_var").expect("present").data().to_vec();
    if cfg.steps > 0 {
        out.provenance = Provenance::Inverted;
    }
    if !out.is_valid() {
        return Err(Error::NonFinite { what: String::from("inverted statistics"), step: cfg.steps });
    }
    Ok((out, report))
}

/// Draws `count` conditioning vectors from `dist`, samples latents with DDIM
/// and decodes them to data space.
pub fn generate_unseen(
    dist: &UnseenDistribution,
    count: usize,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    autoencoder: &Autoencoder,
    sampler: &SamplerConfig,
) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    let mut rng = seeded_rng(sampler.seed);
    let mut f = Vec::with_capacity(count * dist.dim());
    for _ in 0..count {
        f.extend(sample_conditional(dist, &mut rng));
    }
    let f = Tensor::matrix(count, dist.dim(), f)?;
    let z_t = rng.normal_sample(&[count, autoencoder.latent_dim()]);
    let z0 = ddim_sample_from(denoiser, schedule, &f, z_t, sampler, &mut rng)?;
    autoencoder.decode(&z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::linear_beta_schedule;
    use crate::nets::DenoiserConfig;

    fn net() -> (Denoiser, NoiseSchedule) {
        let cfg = DenoiserConfig {
            latent_dim: 3,
            feature_dim: 2,
            cond_dim: 4,
            time_dim: 8,
            hidden: 12,
            timesteps: 20,
            time_period: 100.0,
        };
        (Denoiser::new(cfg, 1).unwrap(), linear_beta_schedule(20, 1e-4, 0.02).unwrap())
    }

    fn dist() -> UnseenDistribution {
        UnseenDistribution::new(3, alloc::vec![0.5, -0.5], &[0.2, 0.3], alloc::vec![0, 1]).unwrap()
    }

    #[test]
    fn zero_steps_is_identity() {
        let (d, s) = net();
        let x = seeded_rng(0).normal_sample(&[3, 3]);
        let cfg = InversionConfig { steps: 0, ..Default::default() };
        let (out, rep) = invert_optimize(&dist(), &x, &d, &s, &Autoencoder::identity(3), &cfg).unwrap();
        assert_eq!(out, dist());
        assert!(rep.losses.is_empty());
    }

    #[test]
    fn condition_blind_denoiser_leaves_stats() {
        let (d, s) = net();
        let mut params = d.params().clone();
        for (name, t) in params.iter_mut() {
            if name == "cond.w" {
                *t = Tensor::zeros(t.shape()).into_param();
            }
        }
        let d = Denoiser::from_parts(d.config(), params).unwrap();
        let x = seeded_rng(0).normal_sample(&[3, 3]);
        let cfg = InversionConfig { steps: 5, lr: 0.1, ..Default::default() };
        let (out, _) = invert_optimize(&dist(), &x, &d, &s, &Autoencoder::identity(3), &cfg).unwrap();
        assert_eq!(out.mean, dist().mean);
        assert_eq!(out.log_var, dist().log_var);
        assert_eq!(out.provenance, Provenance::Inverted);
    }

    #[test]
    fn updates_are_deterministic_and_keep_variance_positive() {
        let (d, s) = net();
        let x = seeded_rng(0).normal_sample(&[2, 3]);
        let cfg = InversionConfig { steps: 30, lr: 0.05, seed: 4, ..Default::default() };
        let ae = Autoencoder::identity(3);
        let (a, ra) = invert_optimize(&dist(), &x, &d, &s, &ae, &cfg).unwrap();
        let (b, rb) = invert_optimize(&dist(), &x, &d, &s, &ae, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_ne!(a.mean, dist().mean);
        assert!(a.variance().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn generation_shape_and_determinism() {
        let (d, s) = net();
        let cfg = SamplerConfig { steps: 5, seed: 2, ..Default::default() };
        let ae = Autoencoder::identity(3);
        let a = generate_unseen(&dist(), 7, &d, &s, &ae, &cfg).unwrap();
        let b = generate_unseen(&dist(), 7, &d, &s, &ae, &cfg).unwrap();
        assert_eq!(a.shape(), &[7, 3]);
        assert_eq!(a, b);
    }
}
