use alloc::vec::Vec;

use super::{hybrid_losses, loss_total, DiffusionBatch, NoiseSchedule};
use crate::calibration::SeenBank;
use crate::error::{Error, Result};
use crate::nets::{minibatches, Autoencoder, Conditioning, Denoiser, TrainConfig, TrainReport};
use crate::synth::Dataset;
use crate::tensor::{seeded_rng, AdamState};
use crate::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserTrainConfig {
    pub train: TrainConfig,
    /// Probability of replacing the conditioning with the null token.
    pub p_uncond: f64,
    /// Weight of the variational term.
    pub lambda: f64,
}

impl DenoiserTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::config(alloc::format!("p_uncond must lie in [0, 1), got {}", self.p_uncond)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("vlb weight must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Trains the conditional denoiser on seen-class data.
///
/// Every item is encoded once with the frozen autoencoder. Per minibatch
/// row: a uniform timestep, fresh noise, a conditioning vector drawn from
/// the item's class Gaussian, and the null token with probability `p_uncond`.
pub fn train_ldm(
    data: &Dataset,
    bank: &SeenBank,
    autoencoder: &Autoencoder,
    denoiser: &mut Denoiser,
    schedule: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let net = denoiser.config();
    if schedule.steps() != net.timesteps {
        return Err(Error::config("schedule length differs from the denoiser's timestep count"));
    }
    if autoencoder.latent_dim() != net.latent_dim {
        return Err(Error::shape("train_ldm", &[autoencoder.latent_dim()], &[net.latent_dim]));
    }
    let mut class_stats = Vec::with_capacity(data.len());
    for &y in &data.labels {
        let s = bank.get(y)?;
        if s.mean.len() != net.feature_dim {
            return Err(Error::shape("train_ldm", &[s.mean.len()], &[net.feature_dim]));
        }
        class_stats.push(s);
    }
    let latents = autoencoder.encode(&data.x)?;
    let std: Vec<Vec<f64>> = class_stats.iter().map(|s| s.var.iter().map(|v| libm::sqrt(*v)).collect()).collect();
    let mut adam = AdamState::new(denoiser.params(), cfg.train.lr.target);
    let mut rng = seeded_rng(cfg.train.seed);
    let mut report = TrainReport::default();
    let mut step = 0;
    for _ in 0..cfg.train.epochs {
        for batch in minibatches(&mut rng, data.len(), cfg.train.batch_size) {
            let z0 = latents.select_rows(&batch)?;
            let rows = batch.len();
            let t: Vec<usize> = (0..rows).map(|_| rng.int_in(1, schedule.steps())).collect();
            let eps = rng.normal_sample(&[rows, net.latent_dim]);
            let mut f = Vec::with_capacity(rows * net.feature_dim);
            for &i in &batch {
                let s = class_stats[i];
                for (m, sd) in s.mean.iter().zip(&std[i]) {
                    f.push(m + sd * rng.normal());
                }
            }
            let null_rows: Vec<bool> = (0..rows).map(|_| rng.bernoulli(cfg.p_uncond)).collect();

            let mut tape = Tape::new();
            let bound = denoiser.bind(&mut tape);
            let features = tape.constant(Tensor::matrix(rows, net.feature_dim, f)?);
            let cond = Conditioning::Dropout { features, null_rows };
            let batch = DiffusionBatch { z0: &z0, t: &t, eps: &eps };
            let terms = hybrid_losses(&mut tape, &bound, schedule, batch, &cond, None)?;
            let loss = loss_total(&mut tape, terms, cfg.lambda)?;
            let value = tape.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite { what: alloc::string::String::from("denoiser loss"), step });
            }
            tape.backward(loss)?;
            let vars = bound.vars().to_vec();
            drop(bound);
            denoiser.params_mut().zero_grad();
            denoiser.params_mut().collect_grads(&tape, &vars)?;
            adam.lr = cfg.train.lr.lr(step);
            adam.step(denoiser.params_mut())?;
            report.losses.push(value);
            step += 1;
        }
    }
    Ok(report)
}
