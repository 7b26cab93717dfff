//! On-disk artifacts. Each stage writes into `<output_dir>/<stage>-<tag>/`,
//! where `<tag>` is the first 16 hex digits of the configuration hash, and
//! leaves a `provenance.txt` naming the config hash, the global seed and the
//! SHA-256 of every input and output file, plus a copy of the config.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{ForgeError, Result};
use crate::seeds::hex_digest;

pub const PROVENANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    config_hash: String,
    config_text: String,
    seed: u64,
}

impl Store {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: PathBuf::from(&cfg.output_dir),
            config_hash: cfg.hash(),
            config_text: cfg.to_text(),
            seed: cfg.seed,
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(format!("{stage}-{}", &self.config_hash[..16]))
    }

    /// Path of an upstream artifact, or a dependency error naming `stage`.
    pub fn input(&self, stage: &'static str, file: &str) -> Result<PathBuf> {
        let path = self.stage_dir(stage).join(file);
        if path.is_file() {
            Ok(path)
        } else {
            Err(ForgeError::Dependency { stage, path })
        }
    }

    /// Starts a stage; its directory is created on the first write.
    pub fn begin(&self, stage: &'static str) -> Result<StageWriter<'_>> {
        let dir = self.stage_dir(stage);
        Ok(StageWriter { store: self, stage, dir, inputs: Vec::new(), outputs: Vec::new() })
    }
}

/// Collects the files a stage read and wrote; `finish` writes provenance.
#[derive(Debug)]
pub struct StageWriter<'a> {
    store: &'a Store,
    stage: &'static str,
    dir: PathBuf,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

impl StageWriter<'_> {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Resolves an upstream artifact and records its digest.
    pub fn input(&mut self, stage: &'static str, file: &str) -> Result<PathBuf> {
        let path = self.store.input(stage, file)?;
        let bytes = std::fs::read(&path).map_err(|e| ForgeError::io(&path, e))?;
        self.inputs.push((format!("{stage}/{file}"), hex_digest(&bytes)));
        Ok(path)
    }

    pub fn write(&mut self, file: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| ForgeError::io(&self.dir, e))?;
        let path = self.dir.join(file);
        std::fs::write(&path, bytes).map_err(|e| ForgeError::io(&path, e))?;
        self.outputs.push((file.to_string(), hex_digest(bytes)));
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let mut text = format!(
            "format_version = {PROVENANCE_FORMAT_VERSION}\nstage = {}\nconfig_hash = {}\nseed = {}\n",
            self.stage, self.store.config_hash, self.store.seed
        );
        for (name, digest) in &self.inputs {
            text.push_str(&format!("input = {name} {digest}\n"));
        }
        for (name, digest) in &self.outputs {
            text.push_str(&format!("output = {name} {digest}\n"));
        }
        for (file, body) in [("config.cfg", &self.store.config_text), ("provenance.txt", &text)] {
            let path = self.dir.join(file);
            std::fs::write(&path, body).map_err(|e| ForgeError::io(&path, e))?;
        }
        Ok(self.dir)
    }
}
