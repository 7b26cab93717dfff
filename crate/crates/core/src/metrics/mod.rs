//! Fidelity, diversity and few-shot classification in the extractor's
//! feature space.

mod fewshot;
mod frechet;

pub use fewshot::{few_shot_classification, FewShotConfig, FewShotResult, LinearHead};
pub use frechet::{diversity_score, fit_gaussian, frechet_distance, Covariance, CovarianceMode, GaussianFit};

use alloc::string::String;
use alloc::vec::Vec;

use crate::ClassId;

/// Fidelity and diversity of one unseen class's generated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub frechet: f64,
    pub diversity: f64,
}

/// Per-class metrics, their mean, and the run settings that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
    pub few_shot: Option<FewShotResult>,
    pub seed: u64,
    /// Flattened `key=value` echo of the configuration.
    pub config: Vec<(String, String)>,
}

impl MetricReport {
    /// `(mean Fréchet distance, mean diversity)` over classes.
    pub fn aggregate(&self) -> (f64, f64) {
        let n = self.classes.len().max(1) as f64;
        let f = self.classes.iter().map(|c| c.frechet).sum::<f64>() / n;
        let d = self.classes.iter().map(|c| c.diversity).sum::<f64>() / n;
        (f, d)
    }
}
