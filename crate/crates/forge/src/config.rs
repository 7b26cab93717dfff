//! Flat `section.key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment. Every file begins with
//! `format_version = 1`. Unknown keys, duplicate keys and malformed values
//! are rejected with their line number.

use std::collections::BTreeSet;
use std::path::Path;

use cdm_core::calibration::{InversionConfig, NeighborMode, SingletonPolicy};
use cdm_core::diffusion::{DenoiserTrainConfig, SamplerConfig};
use cdm_core::metrics::{CovarianceMode, FewShotConfig};
use cdm_core::nets::{AutoencoderMode, DenoiserConfig, ExtractorConfig, TrainConfig};
use cdm_core::synth::{Mixing, Nonlinearity, SplitRule, SyntheticSpec};
use cdm_core::tensor::WarmupSchedule;

use crate::error::{ConfigError, ForgeError, Result};
use crate::seeds::{hex_digest, sub_seed};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Named presets shipped with the binary.
pub const PRESETS: &[(&str, &str)] = &[
    ("default", include_str!("../configs/default.cfg")),
    ("one-shot", include_str!("../configs/one-shot.cfg")),
    ("three-shot", include_str!("../configs/three-shot.cfg")),
];

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, bool, String);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for Option<usize> {
    fn parse_value(s: &str) -> Option<Self> {
        if s == "auto" {
            Some(None)
        } else {
            s.parse().ok().map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "auto".to_string(), |v| v.to_string())
    }
}

macro_rules! enum_value {
    ($t:ty { $($name:literal => $v:expr),* $(,)? }) => {
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                match s {
                    $($name => Some($v),)*
                    _ => None,
                }
            }
            fn render(&self) -> String {
                $(if *self == $v { return $name.to_string(); })*
                unreachable!()
            }
        }
    };
}

enum_value!(Nonlinearity { "identity" => Nonlinearity::Identity, "tanh" => Nonlinearity::Tanh, "cubic" => Nonlinearity::Cubic });
enum_value!(Mixing { "identity" => Mixing::Identity, "random" => Mixing::Random });
enum_value!(AutoencoderMode { "identity" => AutoencoderMode::Identity, "linear" => AutoencoderMode::Linear });
enum_value!(NeighborMode { "class-mean" => NeighborMode::ClassMean, "per-support" => NeighborMode::PerSupport });
enum_value!(SingletonPolicy { "reject" => SingletonPolicy::Reject, "bank-mean" => SingletonPolicy::BankMeanVariance });
enum_value!(CovarianceMode { "diagonal" => CovarianceMode::Diagonal, "full" => CovarianceMode::Full });

#[derive(Debug, Clone, PartialEq)]
pub struct OptimCfg {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataCfg {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub anchor_spread: f64,
    pub anchor_rank: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub nonlinearity: Nonlinearity,
    pub mixing: Mixing,
    pub seen_ratio: usize,
    pub unseen_ratio: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorCfg {
    pub hidden: usize,
    pub feature_dim: usize,
    pub optim: OptimCfg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderCfg {
    pub mode: AutoencoderMode,
    pub latent_dim: usize,
    pub optim: OptimCfg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdmCfg {
    pub cond_dim: usize,
    pub time_dim: usize,
    pub hidden: usize,
    pub timesteps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
    pub time_period: f64,
    pub p_uncond: f64,
    pub lambda: f64,
    pub optim: OptimCfg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibCfg {
    pub neighbors: usize,
    pub shots: usize,
    pub neighbor_mode: NeighborMode,
    pub singleton_policy: SingletonPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertCfg {
    pub steps: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCfg {
    pub steps: usize,
    pub eta: f64,
    pub guidance: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCfg {
    pub covariance: CovarianceMode,
    pub ways: Option<usize>,
    pub fakes: usize,
    pub episodes: usize,
    pub head_steps: usize,
    pub head_lr: f64,
    pub truth_samples: usize,
}

/// Every setting of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub data: DataCfg,
    pub extractor: ExtractorCfg,
    pub autoencoder: AutoencoderCfg,
    pub ldm: LdmCfg,
    pub calib: CalibCfg,
    pub invert: InvertCfg,
    pub sample: SampleCfg,
    pub eval: EvalCfg,
}

macro_rules! config_fields {
    ($($key:literal => $($field:ident).+;)*) => {
        const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), ConfigError> {
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::parse_value(value)
                            .ok_or_else(|| ConfigError::at_key(key, format!("invalid value `{value}`")))?;
                    })*
                    _ => return Err(ConfigError::at_key(key, "unknown key")),
                }
                Ok(())
            }

            /// `(key, value)` pairs in canonical order.
            pub fn entries(&self) -> Vec<(String, String)> {
                vec![$(($key.to_string(), self.$($field).+.render())),*]
            }
        }
    };
}

config_fields! {
    "seed" => seed;
    "output_dir" => output_dir;
    "data.classes" => data.classes;
    "data.dim" => data.dim;
    "data.samples_per_class" => data.samples_per_class;
    "data.anchor_spread" => data.anchor_spread;
    "data.anchor_rank" => data.anchor_rank;
    "data.scale_min" => data.scale_min;
    "data.scale_max" => data.scale_max;
    "data.nonlinearity" => data.nonlinearity;
    "data.mixing" => data.mixing;
    "split.seen_ratio" => data.seen_ratio;
    "split.unseen_ratio" => data.unseen_ratio;
    "extractor.hidden" => extractor.hidden;
    "extractor.feature_dim" => extractor.feature_dim;
    "extractor.epochs" => extractor.optim.epochs;
    "extractor.batch_size" => extractor.optim.batch_size;
    "extractor.lr" => extractor.optim.lr;
    "extractor.warmup" => extractor.optim.warmup;
    "autoencoder.mode" => autoencoder.mode;
    "autoencoder.latent_dim" => autoencoder.latent_dim;
    "autoencoder.epochs" => autoencoder.optim.epochs;
    "autoencoder.batch_size" => autoencoder.optim.batch_size;
    "autoencoder.lr" => autoencoder.optim.lr;
    "autoencoder.warmup" => autoencoder.optim.warmup;
    "ldm.cond_dim" => ldm.cond_dim;
    "ldm.time_dim" => ldm.time_dim;
    "ldm.hidden" => ldm.hidden;
    "ldm.timesteps" => ldm.timesteps;
    "ldm.beta_1" => ldm.beta_1;
    "ldm.beta_t" => ldm.beta_t;
    "ldm.time_period" => ldm.time_period;
    "ldm.p_uncond" => ldm.p_uncond;
    "ldm.lambda" => ldm.lambda;
    "ldm.epochs" => ldm.optim.epochs;
    "ldm.batch_size" => ldm.optim.batch_size;
    "ldm.lr" => ldm.optim.lr;
    "ldm.warmup" => ldm.optim.warmup;
    "calibrate.neighbors" => calib.neighbors;
    "calibrate.shots" => calib.shots;
    "calibrate.neighbor_mode" => calib.neighbor_mode;
    "calibrate.singleton_policy" => calib.singleton_policy;
    "invert.steps" => invert.steps;
    "invert.lr" => invert.lr;
    "sample.steps" => sample.steps;
    "sample.eta" => sample.eta;
    "sample.guidance" => sample.guidance;
    "sample.count" => sample.count;
    "eval.covariance" => eval.covariance;
    "eval.ways" => eval.ways;
    "eval.fakes" => eval.fakes;
    "eval.episodes" => eval.episodes;
    "eval.head_steps" => eval.head_steps;
    "eval.head_lr" => eval.head_lr;
    "eval.truth_samples" => eval.truth_samples;
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config(PRESETS[0].1).expect("default preset is valid")
    }
}

fn split_line(raw: &str) -> Option<(&str, &str)> {
    let line = raw.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return None;
    }
    match line.split_once('=') {
        Some((k, v)) => Some((k.trim(), v.trim())),
        None => Some((line, "")),
    }
}

fn blank() -> RunConfig {
    let optim = OptimCfg { epochs: 0, batch_size: 0, lr: 0.0, warmup: 0 };
    RunConfig {
        seed: 0,
        output_dir: String::new(),
        data: DataCfg {
            classes: 0,
            dim: 0,
            samples_per_class: 0,
            anchor_spread: 0.0,
            anchor_rank: 0,
            scale_min: 0.0,
            scale_max: 0.0,
            nonlinearity: Nonlinearity::Identity,
            mixing: Mixing::Identity,
            seen_ratio: 0,
            unseen_ratio: 0,
        },
        extractor: ExtractorCfg { hidden: 0, feature_dim: 0, optim: optim.clone() },
        autoencoder: AutoencoderCfg { mode: AutoencoderMode::Identity, latent_dim: 0, optim: optim.clone() },
        ldm: LdmCfg {
            cond_dim: 0,
            time_dim: 0,
            hidden: 0,
            timesteps: 0,
            beta_1: 0.0,
            beta_t: 0.0,
            time_period: 0.0,
            p_uncond: 0.0,
            lambda: 0.0,
            optim,
        },
        calib: CalibCfg {
            neighbors: 0,
            shots: 0,
            neighbor_mode: NeighborMode::ClassMean,
            singleton_policy: SingletonPolicy::Reject,
        },
        invert: InvertCfg { steps: 0, lr: 0.0 },
        sample: SampleCfg { steps: 0, eta: 0.0, guidance: 0.0, count: 0 },
        eval: EvalCfg {
            covariance: CovarianceMode::Diagonal,
            ways: None,
            fakes: 0,
            episodes: 0,
            head_steps: 0,
            head_lr: 0.0,
            truth_samples: 0,
        },
    }
}

/// Parses a complete configuration: every key must appear exactly once.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = blank();
    let mut seen = BTreeSet::new();
    let mut version = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, value)) = split_line(raw) else { continue };
        if !raw.contains('=') {
            return Err(ConfigError::at_line(line, Some(key), "expected `key = value`"));
        }
        if key == "format_version" {
            if version.is_some() {
                return Err(ConfigError::at_line(line, Some(key), "duplicate key"));
            }
            let v: u32 =
                value.parse().map_err(|_| ConfigError::at_line(line, Some(key), format!("invalid value `{value}`")))?;
            if v != CONFIG_FORMAT_VERSION {
                return Err(ConfigError::at_line(line, Some(key), format!("unsupported format version {v}")));
            }
            version = Some(v);
            continue;
        }
        if version.is_none() {
            return Err(ConfigError::at_line(line, Some(key), "format_version must come first"));
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::at_line(line, Some(key), "duplicate key"));
        }
        cfg.set(key, value).map_err(|e| ConfigError { line: Some(line), ..e })?;
    }
    if version.is_none() {
        return Err(ConfigError::new("missing format_version"));
    }
    if let Some(missing) = KEYS.iter().find(|k| !seen.contains(**k)) {
        return Err(ConfigError::at_key(missing, "missing key"));
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Loads a file path, or a preset name when no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some((_, text)) = PRESETS.iter().find(|(n, _)| Path::new(n) == path) {
                return Ok(parse_config(text)?);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        Ok(parse_config(&text)?)
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| parse_config(t).expect("presets are valid"))
    }

    /// Applies `key=value` overrides, then revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) =
                o.split_once('=').ok_or_else(|| ConfigError::new(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("format_version = {CONFIG_FORMAT_VERSION}\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Hash of the canonical text, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        hex_digest(c.to_text().as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::at_key(key, msg));
        self.synthetic_spec().validate().map_err(|e| ConfigError::at_key("data", e.to_string()))?;
        if self.data.seen_ratio == 0 || self.data.unseen_ratio == 0 {
            return bad("split.seen_ratio", "split ratios must be positive");
        }
        for (key, o) in
            [("extractor", &self.extractor.optim), ("autoencoder", &self.autoencoder.optim), ("ldm", &self.ldm.optim)]
        {
            if o.batch_size == 0 || o.warmup == 0 || !(o.lr > 0.0) {
                return bad(key, "batch_size, warmup and lr must be positive");
            }
        }
        if self.extractor.hidden == 0 || self.extractor.feature_dim == 0 {
            return bad("extractor.hidden", "extractor dimensions must be positive");
        }
        match self.autoencoder.mode {
            AutoencoderMode::Identity if self.autoencoder.latent_dim != self.data.dim => {
                return bad("autoencoder.latent_dim", "identity autoencoder needs latent_dim = data.dim");
            }
            _ if self.autoencoder.latent_dim == 0 || self.autoencoder.latent_dim > self.data.dim => {
                return bad("autoencoder.latent_dim", "latent_dim must lie in 1..=data.dim");
            }
            _ => {}
        }
        self.denoiser_config().validate().map_err(|e| ConfigError::at_key("ldm", e.to_string()))?;
        if !(0.0..1.0).contains(&self.ldm.p_uncond) {
            return bad("ldm.p_uncond", "must lie in [0, 1)");
        }
        if !(self.ldm.lambda >= 0.0) {
            return bad("ldm.lambda", "must be non-negative");
        }
        if !(0.0 < self.ldm.beta_1 && self.ldm.beta_1 <= self.ldm.beta_t && self.ldm.beta_t < 1.0) {
            return bad("ldm.beta_1", "need 0 < beta_1 <= beta_t < 1");
        }
        if self.calib.neighbors == 0 {
            return bad("calibrate.neighbors", "must be positive");
        }
        if self.calib.shots == 0 || self.calib.shots >= self.data.samples_per_class {
            return bad("calibrate.shots", "must lie in 1..samples_per_class");
        }
        if !(self.invert.lr > 0.0) {
            return bad("invert.lr", "must be positive");
        }
        self.sampler_config(0)
            .validate(self.ldm.timesteps)
            .map_err(|e| ConfigError::at_key("sample", e.to_string()))?;
        if self.sample.count < 2 {
            return bad("sample.count", "need at least 2 samples per class for the metrics");
        }
        if self.eval.episodes == 0 || !(self.eval.head_lr > 0.0) {
            return bad("eval.episodes", "episodes and head_lr must be positive");
        }
        if self.eval.truth_samples == 0 {
            return bad("eval.truth_samples", "must be positive");
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let d = &self.data;
        SyntheticSpec {
            classes: d.classes,
            dim: d.dim,
            samples_per_class: d.samples_per_class,
            anchor_spread: d.anchor_spread,
            anchor_rank: d.anchor_rank,
            scale_min: d.scale_min,
            scale_max: d.scale_max,
            nonlinearity: d.nonlinearity,
            mixing: d.mixing,
            seed: sub_seed(self.seed, "synth-data"),
        }
    }

    pub fn split_rule(&self) -> SplitRule {
        SplitRule::Ratio { seen: self.data.seen_ratio, unseen: self.data.unseen_ratio }
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        ExtractorConfig {
            input_dim: self.data.dim,
            hidden: self.extractor.hidden,
            feature_dim: self.extractor.feature_dim,
        }
    }

    pub fn train_config(&self, optim: &OptimCfg, stage: &str) -> TrainConfig {
        TrainConfig {
            epochs: optim.epochs,
            batch_size: optim.batch_size,
            lr: WarmupSchedule { target: optim.lr, warmup_steps: optim.warmup },
            seed: sub_seed(self.seed, stage),
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            latent_dim: self.autoencoder.latent_dim,
            feature_dim: self.extractor.feature_dim,
            cond_dim: self.ldm.cond_dim,
            time_dim: self.ldm.time_dim,
            hidden: self.ldm.hidden,
            timesteps: self.ldm.timesteps,
            time_period: self.ldm.time_period,
        }
    }

    pub fn denoiser_train_config(&self) -> DenoiserTrainConfig {
        DenoiserTrainConfig {
            train: self.train_config(&self.ldm.optim, "train-ldm"),
            p_uncond: self.ldm.p_uncond,
            lambda: self.ldm.lambda,
        }
    }

    pub fn inversion_config(&self, class: u32) -> InversionConfig {
        InversionConfig {
            steps: self.invert.steps,
            lr: self.invert.lr,
            seed: sub_seed(self.seed, &format!("invert/{class}")),
            ..InversionConfig::default()
        }
    }

    pub fn sampler_config(&self, class: u32) -> SamplerConfig {
        SamplerConfig {
            steps: self.sample.steps,
            eta: self.sample.eta,
            guidance: self.sample.guidance,
            seed: sub_seed(self.seed, &format!("generate/{class}")),
        }
    }

    pub fn few_shot_config(&self) -> FewShotConfig {
        FewShotConfig {
            ways: self.eval.ways,
            shots: self.calib.shots,
            fakes: self.eval.fakes,
            episodes: self.eval.episodes,
            head_steps: self.eval.head_steps,
            head_lr: self.eval.head_lr,
            seed: sub_seed(self.seed, "few-shot"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, text) in PRESETS {
            let cfg = parse_config(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn every_key_is_rendered() {
        assert_eq!(RunConfig::default().entries().len(), KEYS.len());
    }

    #[test]
    fn errors_carry_line_and_key() {
        let text = RunConfig::default().to_text().replace("ldm.lambda = 0.001", "ldm.lambda = heavy");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("ldm.lambda"));
        let line = text.lines().position(|l| l.starts_with("ldm.lambda")).unwrap() + 1;
        assert_eq!(e.line, Some(line));

        let e = parse_config(&format!("{}bogus.key = 1\n", RunConfig::default().to_text())).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("bogus.key"));

        let e = parse_config("seed = 1\n").unwrap_err();
        assert_eq!(e.line, Some(1));

        let dup = format!("{}seed = 3\n", RunConfig::default().to_text());
        assert!(parse_config(&dup).unwrap_err().message.contains("duplicate"));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["seed=9", "eval.ways=auto"]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.apply_overrides(&["calibrate.shots=0"]).is_err());
        assert!(cfg.apply_overrides(&["nokey"]).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
