//! The three trainable networks: feature extractor (conditioning space),
//! latent autoencoder, and the conditional noise predictor.

mod autoencoder;
mod denoiser;
mod extractor;

pub use autoencoder::{train_autoencoder, Autoencoder, AutoencoderMode};
pub use denoiser::{time_embedding, BoundDenoiser, Conditioning, Denoiser, DenoiserConfig, EpsPredictor, NoiseModel};
pub use extractor::{train_extractor, ExtractorConfig, FeatureExtractor};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{SeededRng, WarmupSchedule};
use crate::Tensor;

/// Minibatch training settings shared by the extractor and autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: WarmupSchedule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr.target > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.lr.warmup_steps == 0 {
            return Err(Error::config("warmup steps must be at least 1"));
        }
        Ok(())
    }
}

/// Per-step losses of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn all_finite(&self) -> bool {
        self.losses.iter().all(|l| l.is_finite())
    }

    /// Mean of the first and last `window` losses.
    pub fn head_tail_means(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len()).max(1);
        let head = self.losses.iter().take(w).sum::<f64>() / w as f64;
        let tail = self.losses.iter().rev().take(w).sum::<f64>() / w as f64;
        (head, tail)
    }
}

/// Weight `fan_in x fan_out` drawn from N(0, 1/fan_in); zero bias.
pub(crate) fn dense_init(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let s = 1.0 / libm::sqrt(fan_in as f64);
    let w = rng.normal_sample(&[fan_in, fan_out]).map(|x| x * s);
    (w, Tensor::zeros(&[fan_out]))
}

/// Shuffled minibatch index lists covering `0..n` once.
pub(crate) fn minibatches(rng: &mut SeededRng, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

pub(crate) fn check_cols(op: &'static str, x: &Tensor, cols: usize) -> Result<()> {
    if x.shape().len() > 2 || x.cols() != cols {
        return Err(Error::shape(op, x.shape(), &[cols]));
    }
    Ok(())
}
