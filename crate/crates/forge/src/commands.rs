//! One function per CLI subcommand. Stage commands read upstream artifacts
//! through the [`Store`], run a single pipeline stage and write their own.

use std::path::{Path, PathBuf};

use cdm_core::synth::{Dataset, SplitSpec};
use cdm_core::Tensor;

use crate::checkpoint::{
    load_autoencoder, load_bank, load_denoiser, load_extractor, load_unseen, save_autoencoder, save_bank,
    save_denoiser, save_extractor, save_unseen, Checkpoint,
};
use crate::config::RunConfig;
use crate::error::{ForgeError, Result, StageContext};
use crate::pipeline::{self, UnseenTask};
use crate::report::{ablation_summary, report_csv, report_summary};
use crate::store::{StageWriter, Store};
use crate::table::{
    dataset_to_bytes, episodes_from_text, episodes_to_text, load_dataset, split_from_text, split_to_text,
};

pub const SYNTH: &str = "synth-data";
pub const EXTRACTOR: &str = "train-extractor";
pub const AUTOENCODER: &str = "train-ae";
pub const STATS: &str = "stats";
pub const LDM: &str = "train-ldm";
pub const CALIBRATE: &str = "calibrate";
pub const INVERT: &str = "invert";
pub const GENERATE: &str = "generate";
pub const EVALUATE: &str = "evaluate";
pub const RUN: &str = "run-experiment";
pub const ABLATE: &str = "ablate-inversion";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))
}

fn load_synth(w: &mut StageWriter) -> Result<(Dataset, SplitSpec)> {
    let data = load_dataset(&w.input(SYNTH, "dataset.bin")?)?;
    let split = split_from_text(&read_text(&w.input(SYNTH, "split.txt")?)?)?;
    Ok((data, split))
}

fn load_ckpt(w: &mut StageWriter, stage: &'static str, file: &str) -> Result<Checkpoint> {
    Checkpoint::load(&w.input(stage, file)?)
}

fn load_tasks(w: &mut StageWriter) -> Result<Vec<UnseenTask>> {
    let dists = load_unseen(&load_ckpt(w, CALIBRATE, "calibrated.ckpt")?)?;
    let episodes = episodes_from_text(&read_text(&w.input(CALIBRATE, "episodes.txt")?)?)?;
    if episodes.iter().map(|e| e.class).ne(dists.iter().map(|d| d.class)) {
        return Err(ForgeError::format("episode record", "classes do not match the calibrated statistics"));
    }
    Ok(episodes.into_iter().zip(dists).map(|(episode, dist)| UnseenTask { episode, dist }).collect())
}

pub fn cmd_synth_data(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(SYNTH)?;
    let prepared = pipeline::synth_data(cfg)?;
    w.write("dataset.bin", &dataset_to_bytes(&prepared.data))?;
    w.write("split.txt", split_to_text(&prepared.split).as_bytes())?;
    w.finish()
}

pub fn cmd_train_extractor(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(EXTRACTOR)?;
    let (data, split) = load_synth(&mut w)?;
    let seen = data.restrict(&split.seen).stage(EXTRACTOR)?;
    let net = pipeline::train_extractor_stage(cfg, &seen)?;
    w.write("extractor.ckpt", &save_extractor(&net).to_bytes())?;
    w.finish()
}

pub fn cmd_train_ae(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(AUTOENCODER)?;
    let (data, split) = load_synth(&mut w)?;
    let seen = data.restrict(&split.seen).stage(AUTOENCODER)?;
    let ae = pipeline::train_ae_stage(cfg, &seen)?;
    w.write("autoencoder.ckpt", &save_autoencoder(&ae).to_bytes())?;
    w.finish()
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(STATS)?;
    let (data, split) = load_synth(&mut w)?;
    let extractor = load_extractor(&load_ckpt(&mut w, EXTRACTOR, "extractor.ckpt")?)?;
    let seen = data.restrict(&split.seen).stage(STATS)?;
    let bank = pipeline::stats_stage(cfg, &extractor, &seen)?;
    w.write("stats.ckpt", &save_bank(&bank).to_bytes())?;
    w.finish()
}

pub fn cmd_train_ldm(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(LDM)?;
    let (data, split) = load_synth(&mut w)?;
    let bank = load_bank(&load_ckpt(&mut w, STATS, "stats.ckpt")?)?;
    let ae = load_autoencoder(&load_ckpt(&mut w, AUTOENCODER, "autoencoder.ckpt")?)?;
    let seen = data.restrict(&split.seen).stage(LDM)?;
    let (net, losses) = pipeline::train_ldm_stage(cfg, &seen, &bank, &ae)?;
    w.write("denoiser.ckpt", &save_denoiser(&net).to_bytes())?;
    let mut log = String::from("format_version = 1\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{i} {l:?}\n"));
    }
    w.write("losses.txt", log.as_bytes())?;
    w.finish()
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(CALIBRATE)?;
    let (data, split) = load_synth(&mut w)?;
    let extractor = load_extractor(&load_ckpt(&mut w, EXTRACTOR, "extractor.ckpt")?)?;
    let bank = load_bank(&load_ckpt(&mut w, STATS, "stats.ckpt")?)?;
    let tasks = pipeline::calibrate_stage(cfg, &data, &split, &extractor, &bank)?;
    let dists: Vec<_> = tasks.iter().map(|t| t.dist.clone()).collect();
    let episodes: Vec<_> = tasks.into_iter().map(|t| t.episode).collect();
    w.write("calibrated.ckpt", &save_unseen(&dists).to_bytes())?;
    w.write("episodes.txt", episodes_to_text(&episodes).as_bytes())?;
    w.finish()
}

pub fn cmd_invert(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(INVERT)?;
    let data = load_dataset(&w.input(SYNTH, "dataset.bin")?)?;
    let tasks = load_tasks(&mut w)?;
    let denoiser = load_denoiser(&load_ckpt(&mut w, LDM, "denoiser.ckpt")?)?;
    let ae = load_autoencoder(&load_ckpt(&mut w, AUTOENCODER, "autoencoder.ckpt")?)?;
    let dists = pipeline::invert_stage(cfg, &data, &tasks, &denoiser, &ae)?;
    w.write("inverted.ckpt", &save_unseen(&dists).to_bytes())?;
    w.finish()
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(GENERATE)?;
    let dists = load_unseen(&load_ckpt(&mut w, INVERT, "inverted.ckpt")?)?;
    let denoiser = load_denoiser(&load_ckpt(&mut w, LDM, "denoiser.ckpt")?)?;
    let ae = load_autoencoder(&load_ckpt(&mut w, AUTOENCODER, "autoencoder.ckpt")?)?;
    let generated = pipeline::generate_stage(cfg, &dists, &denoiser, &ae)?;
    w.write("generated.bin", &dataset_to_bytes(&generated_table(&generated)?))?;
    w.finish()
}

fn generated_table(generated: &[(u32, Tensor)]) -> Result<Dataset> {
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut labels = Vec::new();
    for (class, x) in generated {
        rows.extend(x.row_iter());
        labels.extend(std::iter::repeat_n(*class, x.rows()));
    }
    Dataset::new(Tensor::from_rows(&rows).stage(GENERATE)?, labels).stage(GENERATE)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(EVALUATE)?;
    let (data, split) = load_synth(&mut w)?;
    let tasks = load_tasks(&mut w)?;
    let extractor = load_extractor(&load_ckpt(&mut w, EXTRACTOR, "extractor.ckpt")?)?;
    let bank = load_bank(&load_ckpt(&mut w, STATS, "stats.ckpt")?)?;
    let denoiser = load_denoiser(&load_ckpt(&mut w, LDM, "denoiser.ckpt")?)?;
    let ae = load_autoencoder(&load_ckpt(&mut w, AUTOENCODER, "autoencoder.ckpt")?)?;
    let table = load_dataset(&w.input(GENERATE, "generated.bin")?)?;
    let mut generated = Vec::new();
    for task in &tasks {
        let class = task.episode.class;
        generated.push((class, table.class_rows(class).stage(EVALUATE)?));
    }
    let classes = pipeline::class_metrics(cfg, &data, &extractor, &tasks, &generated)?;
    let few_shot = pipeline::few_shot_with(cfg, &data, &split, &extractor, &bank, &denoiser, &ae)?;
    let report =
        cdm_core::metrics::MetricReport { classes, few_shot: Some(few_shot), seed: cfg.seed, config: cfg.entries() };
    w.write("metrics.csv", report_csv(&report).as_bytes())?;
    w.write("summary.txt", report_summary(&report, store.config_hash()).as_bytes())?;
    w.finish()
}

/// Runs every stage in order through the artifact store; returns the
/// evaluation directory holding `metrics.csv` and `summary.txt`.
pub fn cmd_run_experiment(cfg: &RunConfig) -> Result<PathBuf> {
    for stage in [
        cmd_synth_data,
        cmd_train_extractor,
        cmd_train_ae,
        cmd_stats,
        cmd_train_ldm,
        cmd_calibrate,
        cmd_invert,
        cmd_generate,
    ] {
        stage(cfg)?;
    }
    cmd_evaluate(cfg)
}

/// Both ablation arms from one set of trained networks; writes
/// `without.csv`, `with.csv` and `summary.txt`.
pub fn cmd_ablate_inversion(cfg: &RunConfig) -> Result<PathBuf> {
    let store = Store::new(cfg);
    let mut w = store.begin(ABLATE)?;
    let (ab, _) = pipeline::ablate_inversion(cfg)?;
    w.write("without.csv", report_csv(&ab.without).as_bytes())?;
    w.write("with.csv", report_csv(&ab.with).as_bytes())?;
    w.write("summary.txt", ablation_summary(&ab, store.config_hash()).as_bytes())?;
    w.finish()
}

pub fn run(command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    match command {
        SYNTH => cmd_synth_data(cfg),
        EXTRACTOR => cmd_train_extractor(cfg),
        AUTOENCODER => cmd_train_ae(cfg),
        STATS => cmd_stats(cfg),
        LDM => cmd_train_ldm(cfg),
        CALIBRATE => cmd_calibrate(cfg),
        INVERT => cmd_invert(cfg),
        GENERATE => cmd_generate(cfg),
        EVALUATE => cmd_evaluate(cfg),
        RUN => cmd_run_experiment(cfg),
        ABLATE => cmd_ablate_inversion(cfg),
        other => Err(ForgeError::format("command", format!("unknown subcommand `{other}`"))),
    }
}
