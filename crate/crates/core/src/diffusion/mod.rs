//! Forward noising, the hybrid training objective, classifier-free guidance
//! and DDIM sampling.

mod loss;
mod sampler;
mod schedule;
mod train;

pub use loss::{diag_gaussian_kl, hybrid_losses, loss_simple, loss_total, loss_vlb, DiffusionBatch, LossTerms};
pub use sampler::{cfg_predict, ddim_sample, ddim_sample_from, ddim_timesteps, SamplerConfig};
pub use schedule::{linear_beta_schedule, NoiseSchedule};
pub use train::{train_ldm, DenoiserTrainConfig};
