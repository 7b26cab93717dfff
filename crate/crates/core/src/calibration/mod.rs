//! Class-wise Gaussian statistics of the conditioning space, transfer to
//! unseen classes, and inversion through the frozen denoiser.

mod invert;
mod stats;

pub use invert::{generate_unseen, invert_optimize, InversionConfig, InversionReport};
pub use stats::{
    calibrate, calibrate_variance, compute_seen_stats, nearest_seen_classes, reparameterize, sample_conditional,
    support_mean, ClassStats, NeighborMode, Provenance, SeenBank, SingletonPolicy, UnseenDistribution,
};
