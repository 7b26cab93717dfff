use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cdm_forge::commands::{cmd_ablate_inversion, cmd_run_experiment, cmd_synth_data, cmd_train_extractor};
use cdm_forge::pipeline::run_experiment;
use cdm_forge::report::report_csv;
use cdm_forge::seeds::hex_digest;
use cdm_forge::RunConfig;

const FAST: &[&str] = &[
    "data.samples_per_class=48",
    "extractor.epochs=2",
    "ldm.epochs=2",
    "ldm.warmup=5",
    "invert.steps=3",
    "sample.steps=5",
    "sample.count=12",
    "eval.fakes=6",
    "eval.episodes=2",
    "eval.head_steps=10",
    "eval.truth_samples=64",
];

fn fast_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::preset("default").unwrap();
    cfg.apply_overrides(FAST).unwrap();
    cfg.output_dir = dir.to_string_lossy().into_owned();
    cfg
}

fn cli(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdm-forge"));
    cmd.args(args).arg("--set").arg(format!("output_dir={}", dir.display()));
    for o in FAST {
        cmd.arg("--set").arg(o);
    }
    cmd.output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stage_dir(dir: &Path, stage: &str) -> PathBuf {
    let found: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(&format!("{stage}-")))
        .collect();
    assert_eq!(found.len(), 1, "expected one {stage} directory in {}", dir.display());
    found.into_iter().next().unwrap()
}

#[test]
fn staged_run_matches_in_memory_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let eval = cmd_run_experiment(&cfg).unwrap();
    let staged = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    let (report, _) = run_experiment(&cfg).unwrap();
    assert_eq!(staged, report_csv(&report));
    assert_eq!(staged.lines().count(), 1 + 2 + 1);
    let summary = std::fs::read_to_string(eval.join("summary.txt")).unwrap();
    assert!(summary.starts_with("format_version = 1\n"));
    assert!(summary.contains(&cfg.hash()));
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    cmd_synth_data(&cfg).unwrap();
    let first = std::fs::read(cmd_train_extractor(&cfg).unwrap().join("extractor.ckpt")).unwrap();
    let again = std::fs::read(cmd_train_extractor(&cfg).unwrap().join("extractor.ckpt")).unwrap();
    assert_eq!(first, again);
}

#[test]
fn provenance_records_hashes_of_inputs_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    cmd_synth_data(&cfg).unwrap();
    let out = cmd_train_extractor(&cfg).unwrap();
    let prov = std::fs::read_to_string(out.join("provenance.txt")).unwrap();
    assert!(prov.starts_with("format_version = 1\nstage = train-extractor\n"));
    assert!(prov.contains(&format!("config_hash = {}", cfg.hash())));
    let synth = stage_dir(dir.path(), "synth-data");
    let digest = hex_digest(&std::fs::read(synth.join("dataset.bin")).unwrap());
    assert!(prov.contains(&format!("input = synth-data/dataset.bin {digest}")));
    let ckpt = hex_digest(&std::fs::read(out.join("extractor.ckpt")).unwrap());
    assert!(prov.contains(&format!("output = extractor.ckpt {ckpt}")));
    let saved = RunConfig::load(&out.join("config.cfg")).unwrap();
    assert_eq!(saved.hash(), cfg.hash());
}

#[test]
fn missing_upstream_artifact_exits_with_dependency_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["invert"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("`synth-data`"), "{}", stderr(&out));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none(), "failed stage left files behind");
}

#[test]
fn deleting_downstream_artifacts_keeps_upstream_usable() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth-data", "train-extractor", "stats"] {
        assert_eq!(cli(dir.path(), &[stage]).status.code(), Some(0), "{stage}");
    }
    let extractor = stage_dir(dir.path(), "train-extractor");
    std::fs::remove_dir_all(&extractor).unwrap();
    let out = cli(dir.path(), &["stats"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("`train-extractor`"));
    assert_eq!(cli(dir.path(), &["train-extractor"]).status.code(), Some(0));
    assert_eq!(cli(dir.path(), &["stats"]).status.code(), Some(0));
}

#[test]
fn config_problems_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["synth-data", "--set", "data.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data.nope"));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "format_version = 1\nseed = three\n").unwrap();
    let out = cli(dir.path(), &["synth-data", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert!(stderr(&out).contains("seed"));

    let out = cli(dir.path(), &["synth-data", "--set", "calibrate.shots=0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth-data", "train-extractor", "train-ae", "stats"] {
        assert_eq!(cli(dir.path(), &[stage, "--set", "ldm.lr=1e200"]).status.code(), Some(0), "{stage}");
    }
    let out = cli(dir.path(), &["train-ldm", "--set", "ldm.lr=1e200"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn linear_autoencoder_runs_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &[
            "run-experiment",
            "--set",
            "autoencoder.mode=linear",
            "--set",
            "autoencoder.latent_dim=8",
            "--set",
            "autoencoder.epochs=2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(stage_dir(dir.path(), "evaluate").join("metrics.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("1,aggregate,"));
}

#[test]
fn ablation_writes_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_ablate_inversion(&fast_config(dir.path())).unwrap();
    for f in ["with.csv", "without.csv", "summary.txt", "provenance.txt", "config.cfg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("delta (with - without)"));
    assert_eq!(summary.matches("mean error").count(), 2);
}

#[test]
fn presets_differ_only_in_shots_and_output() {
    let base = RunConfig::preset("default").unwrap();
    for (name, shots) in [("one-shot", 1), ("three-shot", 3)] {
        let mut p = RunConfig::preset(name).unwrap();
        assert_eq!(p.calib.shots, shots);
        p.calib.shots = base.calib.shots;
        p.output_dir = base.output_dir.clone();
        assert_eq!(p.to_text(), base.to_text());
    }
    assert_eq!(base.calib.neighbors, 2);
    assert_eq!(base.sample.count, 128);
}
