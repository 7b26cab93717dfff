//! The stages of a run as in-memory functions. The CLI persists their
//! outputs; tests and the ablation runner call them directly.

use cdm_core::calibration::{
    calibrate, compute_seen_stats, generate_unseen, invert_optimize, SeenBank, UnseenDistribution,
};
use cdm_core::diffusion::{linear_beta_schedule, train_ldm, NoiseSchedule};
use cdm_core::metrics::{
    diversity_score, few_shot_classification, fit_gaussian, frechet_distance, ClassMetrics, FewShotResult, MetricReport,
};
use cdm_core::nets::{train_autoencoder, train_extractor, Autoencoder, AutoencoderMode, Denoiser, FeatureExtractor};
use cdm_core::synth::{generate_dataset, sample_episode, split, Dataset, Episode, GroundTruth, SplitSpec};
use cdm_core::tensor::seeded_rng;
use cdm_core::{ClassId, Tensor};

use crate::config::RunConfig;
use crate::error::{Result, StageContext};
use crate::seeds::sub_seed;

/// Dataset, its generators and the seen/unseen split.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub data: Dataset,
    pub truth: GroundTruth,
    pub split: SplitSpec,
}

impl Prepared {
    pub fn seen(&self) -> Result<Dataset> {
        self.data.restrict(&self.split.seen).stage("synth-data")
    }
}

pub fn synth_data(cfg: &RunConfig) -> Result<Prepared> {
    let (data, truth) = generate_dataset(&cfg.synthetic_spec()).stage("synth-data")?;
    let split = split(&data.class_ids(), &cfg.split_rule(), sub_seed(cfg.seed, "split")).stage("synth-data")?;
    Ok(Prepared { data, truth, split })
}

pub fn train_extractor_stage(cfg: &RunConfig, seen: &Dataset) -> Result<FeatureExtractor> {
    let train = cfg.train_config(&cfg.extractor.optim, "train-extractor");
    let (net, _) = train_extractor(&seen.x, &seen.labels, cfg.extractor_config(), &train).stage("train-extractor")?;
    Ok(net)
}

pub fn train_ae_stage(cfg: &RunConfig, seen: &Dataset) -> Result<Autoencoder> {
    match cfg.autoencoder.mode {
        AutoencoderMode::Identity => Ok(Autoencoder::identity(cfg.data.dim)),
        AutoencoderMode::Linear => {
            let train = cfg.train_config(&cfg.autoencoder.optim, "train-ae");
            let mut ae = Autoencoder::linear(cfg.data.dim, cfg.autoencoder.latent_dim, train.seed).stage("train-ae")?;
            train_autoencoder(&mut ae, &seen.x, &train).stage("train-ae")?;
            Ok(ae)
        }
    }
}

pub fn stats_stage(cfg: &RunConfig, extractor: &FeatureExtractor, seen: &Dataset) -> Result<SeenBank> {
    let mut groups = Vec::new();
    for class in seen.class_ids() {
        let x = seen.class_rows(class).stage("stats")?;
        groups.push((class, extractor.extract(&x).stage("stats")?));
    }
    compute_seen_stats(&groups, cfg.calib.singleton_policy).stage("stats")
}

pub fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    linear_beta_schedule(cfg.ldm.timesteps, cfg.ldm.beta_1, cfg.ldm.beta_t).stage("train-ldm")
}

pub fn train_ldm_stage(
    cfg: &RunConfig,
    seen: &Dataset,
    bank: &SeenBank,
    ae: &Autoencoder,
) -> Result<(Denoiser, Vec<f64>)> {
    let train = cfg.denoiser_train_config();
    let mut net = Denoiser::new(cfg.denoiser_config(), sub_seed(cfg.seed, "init-ldm")).stage("train-ldm")?;
    let report = train_ldm(seen, bank, ae, &mut net, &schedule(cfg)?, &train).stage("train-ldm")?;
    Ok((net, report.losses))
}

/// One unseen class: its K-shot episode and calibrated distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct UnseenTask {
    pub episode: Episode,
    pub dist: UnseenDistribution,
}

pub fn episode_seed(cfg: &RunConfig, class: ClassId) -> u64 {
    sub_seed(cfg.seed, &format!("episode/{class}"))
}

pub fn calibrate_stage(
    cfg: &RunConfig,
    data: &Dataset,
    split: &SplitSpec,
    extractor: &FeatureExtractor,
    bank: &SeenBank,
) -> Result<Vec<UnseenTask>> {
    let mut tasks = Vec::new();
    for &class in &split.unseen {
        let episode =
            sample_episode(data, split, class, cfg.calib.shots, episode_seed(cfg, class)).stage("calibrate")?;
        let x = data.x.select_rows(&episode.support).stage("calibrate")?;
        let dist = calibrate_supports(cfg, extractor, bank, class, &x)?;
        tasks.push(UnseenTask { episode, dist });
    }
    Ok(tasks)
}

fn calibrate_supports(
    cfg: &RunConfig,
    extractor: &FeatureExtractor,
    bank: &SeenBank,
    class: ClassId,
    support_x: &Tensor,
) -> Result<UnseenDistribution> {
    let f = extractor.extract(support_x).stage("calibrate")?;
    let rows: Vec<&[f64]> = f.row_iter().collect();
    calibrate(bank, class, &rows, cfg.calib.neighbors, cfg.calib.neighbor_mode).stage("calibrate")
}

pub fn invert_stage(
    cfg: &RunConfig,
    data: &Dataset,
    tasks: &[UnseenTask],
    denoiser: &Denoiser,
    ae: &Autoencoder,
) -> Result<Vec<UnseenDistribution>> {
    let sched = schedule(cfg)?;
    tasks
        .iter()
        .map(|task| {
            let x = data.x.select_rows(&task.episode.support).stage("invert")?;
            let (d, _) = invert_optimize(&task.dist, &x, denoiser, &sched, ae, &cfg.inversion_config(task.dist.class))
                .stage("invert")?;
            Ok(d)
        })
        .collect()
}

pub fn generate_stage(
    cfg: &RunConfig,
    dists: &[UnseenDistribution],
    denoiser: &Denoiser,
    ae: &Autoencoder,
) -> Result<Vec<(ClassId, Tensor)>> {
    let sched = schedule(cfg)?;
    dists
        .iter()
        .map(|d| {
            let x = generate_unseen(d, cfg.sample.count, denoiser, &sched, ae, &cfg.sampler_config(d.class))
                .stage("generate")?;
            Ok((d.class, x))
        })
        .collect()
}

/// Fréchet distance to the held-out real items and diversity, per class.
pub fn class_metrics(
    cfg: &RunConfig,
    data: &Dataset,
    extractor: &FeatureExtractor,
    tasks: &[UnseenTask],
    generated: &[(ClassId, Tensor)],
) -> Result<Vec<ClassMetrics>> {
    let mut out = Vec::new();
    for (class, x) in generated {
        let task = tasks
            .iter()
            .find(|t| t.episode.class == *class)
            .ok_or(cdm_core::Error::MissingClass(*class))
            .stage("evaluate")?;
        let real = extractor.extract(&data.x.select_rows(&task.episode.query).stage("evaluate")?).stage("evaluate")?;
        let fake = extractor.extract(x).stage("evaluate")?;
        let a = fit_gaussian(&real, cfg.eval.covariance).stage("evaluate")?;
        let b = fit_gaussian(&fake, cfg.eval.covariance).stage("evaluate")?;
        out.push(ClassMetrics {
            class: *class,
            frechet: frechet_distance(&a, &b).stage("evaluate")?,
            diversity: diversity_score(std::slice::from_ref(&fake)).stage("evaluate")?,
        });
    }
    Ok(out)
}

/// Mean extractor feature over `eval.truth_samples` fresh items of `class`.
pub fn true_feature_mean(
    cfg: &RunConfig,
    truth: &GroundTruth,
    extractor: &FeatureExtractor,
    class: ClassId,
) -> Result<Vec<f64>> {
    let mut rng = seeded_rng(sub_seed(cfg.seed, &format!("truth/{class}")));
    let x = truth.sample(class, cfg.eval.truth_samples, &mut rng).stage("evaluate")?;
    let f = extractor.extract(&x).stage("evaluate")?;
    let mut mean = vec![0.0; f.cols()];
    for row in f.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / f.rows() as f64;
        }
    }
    Ok(mean)
}

/// Trained networks and statistics shared by every downstream stage.
#[derive(Debug, Clone)]
pub struct Trained {
    pub prepared: Prepared,
    pub extractor: FeatureExtractor,
    pub autoencoder: Autoencoder,
    pub bank: SeenBank,
    pub denoiser: Denoiser,
    pub ldm_losses: Vec<f64>,
}

pub fn train_all(cfg: &RunConfig) -> Result<Trained> {
    let prepared = synth_data(cfg)?;
    let seen = prepared.seen()?;
    let extractor = train_extractor_stage(cfg, &seen)?;
    let autoencoder = train_ae_stage(cfg, &seen)?;
    let bank = stats_stage(cfg, &extractor, &seen)?;
    let (denoiser, ldm_losses) = train_ldm_stage(cfg, &seen, &bank, &autoencoder)?;
    Ok(Trained { prepared, extractor, autoencoder, bank, denoiser, ldm_losses })
}

/// Few-shot harness whose generator runs calibration, inversion and
/// sampling from each episode's supports.
pub fn few_shot_stage(cfg: &RunConfig, t: &Trained) -> Result<FewShotResult> {
    few_shot_with(cfg, &t.prepared.data, &t.prepared.split, &t.extractor, &t.bank, &t.denoiser, &t.autoencoder)
}

pub fn few_shot_with(
    cfg: &RunConfig,
    data: &Dataset,
    split: &SplitSpec,
    extractor: &FeatureExtractor,
    bank: &SeenBank,
    denoiser: &Denoiser,
    ae: &Autoencoder,
) -> Result<FewShotResult> {
    let sched = schedule(cfg)?;
    let fs = cfg.few_shot_config();
    few_shot_classification(data, split, extractor, &fs, |class, x, count, seed| {
        let f = extractor.extract(x)?;
        let rows: Vec<&[f64]> = f.row_iter().collect();
        let dist = calibrate(bank, class, &rows, cfg.calib.neighbors, cfg.calib.neighbor_mode)?;
        let mut inv = cfg.inversion_config(class);
        inv.seed ^= seed;
        let (dist, _) = invert_optimize(&dist, x, denoiser, &sched, ae, &inv)?;
        let mut sampler = cfg.sampler_config(class);
        sampler.seed ^= seed;
        generate_unseen(&dist, count, denoiser, &sched, ae, &sampler)
    })
    .stage("evaluate")
}

/// Full run: train, calibrate, invert, generate, evaluate.
pub fn run_experiment(cfg: &RunConfig) -> Result<(MetricReport, Trained)> {
    let t = train_all(cfg)?;
    let (data, split) = (&t.prepared.data, &t.prepared.split);
    let tasks = calibrate_stage(cfg, data, split, &t.extractor, &t.bank)?;
    let dists = invert_stage(cfg, data, &tasks, &t.denoiser, &t.autoencoder)?;
    let generated = generate_stage(cfg, &dists, &t.denoiser, &t.autoencoder)?;
    let classes = class_metrics(cfg, data, &t.extractor, &tasks, &generated)?;
    let few_shot = Some(few_shot_stage(cfg, &t)?);
    let report = MetricReport { classes, few_shot, seed: cfg.seed, config: cfg.entries() };
    Ok((report, t))
}

/// Both arms of the inversion ablation plus per-class mean errors.
#[derive(Debug, Clone)]
pub struct Ablation {
    pub without: MetricReport,
    pub with: MetricReport,
    /// `(class, ‖μ_calibrated − μ_true‖, ‖μ_inverted − μ_true‖)`.
    pub mean_errors: Vec<(ClassId, f64, f64)>,
}

impl Ablation {
    /// `(Fréchet with − without, diversity with − without)` on the aggregates.
    pub fn deltas(&self) -> (f64, f64) {
        let (fw, dw) = self.with.aggregate();
        let (fo, d_o) = self.without.aggregate();
        (fw - fo, dw - d_o)
    }
}

/// Generates from the same calibrated statistics and denoiser twice, once
/// without and once with inversion; sampler seeds are shared.
pub fn ablate_from(cfg: &RunConfig, t: &Trained) -> Result<Ablation> {
    let data = &t.prepared.data;
    let tasks = calibrate_stage(cfg, data, &t.prepared.split, &t.extractor, &t.bank)?;
    let calibrated: Vec<UnseenDistribution> = tasks.iter().map(|t| t.dist.clone()).collect();
    let inverted = invert_stage(cfg, data, &tasks, &t.denoiser, &t.autoencoder)?;
    let mut mean_errors = Vec::new();
    for (c, i) in calibrated.iter().zip(&inverted) {
        let truth = true_feature_mean(cfg, &t.prepared.truth, &t.extractor, c.class)?;
        mean_errors.push((c.class, l2(&c.mean, &truth), l2(&i.mean, &truth)));
    }
    let arm = |dists: &[UnseenDistribution]| -> Result<MetricReport> {
        let generated = generate_stage(cfg, dists, &t.denoiser, &t.autoencoder)?;
        let classes = class_metrics(cfg, data, &t.extractor, &tasks, &generated)?;
        Ok(MetricReport { classes, few_shot: None, seed: cfg.seed, config: cfg.entries() })
    };
    Ok(Ablation { without: arm(&calibrated)?, with: arm(&inverted)?, mean_errors })
}

pub fn ablate_inversion(cfg: &RunConfig) -> Result<(Ablation, Trained)> {
    let t = train_all(cfg)?;
    Ok((ablate_from(cfg, &t)?, t))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
