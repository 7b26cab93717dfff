//! Checkpoint container: a text header naming every tensor, its shape and
//! its byte range, followed by the little-endian `f64` payload.
//!
//! ```text
//! format_version = 1
//! module = extractor
//! meta.input_dim = 16
//! tensor = l1.w 16x64 0 8192
//! end
//! <payload>
//! ```
//!
//! Offsets and lengths are in bytes relative to the start of the payload.

use std::path::Path;

use cdm_core::calibration::{ClassStats, Provenance, SeenBank, UnseenDistribution};
use cdm_core::nets::{Autoencoder, AutoencoderMode, Denoiser, DenoiserConfig, ExtractorConfig, FeatureExtractor};
use cdm_core::tensor::ParamStore;
use cdm_core::{ClassId, Tensor};

use crate::error::{ForgeError, Result, StageContext};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub module: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(message: impl Into<String>) -> ForgeError {
    ForgeError::format("checkpoint", message)
}

impl Checkpoint {
    pub fn new(module: &str) -> Self {
        Self { module: module.to_string(), ..Self::default() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with_params(mut self, params: &ParamStore) -> Self {
        for (name, t) in params.iter() {
            self.tensors.push((name.to_string(), plain(t)));
        }
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("{} checkpoint lacks meta `{key}`", self.module)))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse().map_err(|_| bad(format!("meta `{key}` has invalid value `{raw}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("{} checkpoint lacks tensor `{name}`", self.module)))
    }

    pub fn expect_module(&self, module: &str) -> Result<()> {
        if self.module != module {
            return Err(bad(format!("expected a `{module}` checkpoint, found `{}`", self.module)));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store.push(name, t.clone().into_param()).stage("checkpoint")?;
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("format_version = {CHECKPOINT_FORMAT_VERSION}\nmodule = {}\n", self.module);
        for (k, v) in &self.meta {
            header.push_str(&format!("meta.{k} = {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let shape = t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            let len = t.numel() * 8;
            header.push_str(&format!("tensor = {name} {shape} {offset} {len}\n"));
            offset += len;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (lines, payload) = split_header(bytes, "checkpoint")?;
        let mut lines = lines.into_iter();
        expect_version(lines.next(), CHECKPOINT_FORMAT_VERSION, "checkpoint")?;
        let module = match lines.next().and_then(|l| l.strip_prefix("module = ")) {
            Some(m) => m.to_string(),
            None => return Err(bad("second header line must be `module = <name>`")),
        };
        let mut ck = Checkpoint::new(&module);
        let mut cursor = 0usize;
        for line in lines {
            if let Some(rest) = line.strip_prefix("meta.") {
                let (k, v) = rest.split_once(" = ").ok_or_else(|| bad(format!("bad meta line `{line}`")))?;
                ck.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor = ") {
                let fields: Vec<&str> = rest.split(' ').collect();
                let [name, shape, offset, len] = fields[..] else {
                    return Err(bad(format!("bad tensor line `{line}`")));
                };
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad shape `{shape}`"))))
                    .collect::<Result<_>>()?;
                let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in `{line}`")))?;
                let len: usize = len.parse().map_err(|_| bad(format!("bad length in `{line}`")))?;
                if offset != cursor {
                    return Err(bad(format!("tensor `{name}` starts at {offset}, expected {cursor}")));
                }
                let numel: usize = shape.iter().product();
                if len != numel * 8 || offset + len > payload.len() {
                    return Err(bad(format!("tensor `{name}` byte range does not fit its shape or the payload")));
                }
                let data = read_f64s(&payload[offset..offset + len]);
                ck.tensors.push((name.to_string(), Tensor::new(&shape, data).stage("checkpoint")?));
                cursor += len;
            } else {
                return Err(bad(format!("unexpected header line `{line}`")));
            }
        }
        if cursor != payload.len() {
            return Err(bad(format!("manifest covers {cursor} bytes but payload has {}", payload.len())));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| ForgeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| ForgeError::io(path, e))?)
    }
}

fn plain(t: &Tensor) -> Tensor {
    Tensor::new(t.shape(), t.data().to_vec()).expect("shape already validated")
}

pub(crate) fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect()
}

/// Splits a file into its text header lines (up to `end`) and the binary
/// remainder.
pub(crate) fn split_header<'a>(bytes: &'a [u8], what: &'static str) -> Result<(Vec<&'a str>, &'a [u8])> {
    let mut lines = Vec::new();
    let mut start = 0;
    while let Some(nl) = bytes[start..].iter().position(|&b| b == b'\n') {
        let line = std::str::from_utf8(&bytes[start..start + nl])
            .map_err(|_| ForgeError::format(what, "header is not valid UTF-8"))?;
        start += nl + 1;
        if line == "end" {
            return Ok((lines, &bytes[start..]));
        }
        lines.push(line);
    }
    Err(ForgeError::format(what, "header has no `end` line"))
}

pub(crate) fn expect_version(line: Option<&str>, version: u32, what: &'static str) -> Result<()> {
    match line.and_then(|l| l.strip_prefix("format_version = ")) {
        Some(v) if v.parse() == Ok(version) => Ok(()),
        Some(v) => Err(ForgeError::format(what, format!("unsupported format version {v}"))),
        None => Err(ForgeError::format(what, "first line must be `format_version = <n>`")),
    }
}

fn join_ids(ids: &[ClassId]) -> String {
    ids.iter().map(ClassId::to_string).collect::<Vec<_>>().join(",")
}

fn parse_ids(s: &str) -> Result<Vec<ClassId>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| v.parse().map_err(|_| bad(format!("bad class id `{v}`")))).collect()
}

fn mode_name(mode: AutoencoderMode) -> &'static str {
    match mode {
        AutoencoderMode::Identity => "identity",
        AutoencoderMode::Linear => "linear",
    }
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Calibrated => "calibrated",
        Provenance::Inverted => "inverted",
    }
}

pub fn save_extractor(net: &FeatureExtractor) -> Checkpoint {
    let c = net.config();
    Checkpoint::new("extractor")
        .with_meta("input_dim", c.input_dim)
        .with_meta("hidden", c.hidden)
        .with_meta("feature_dim", c.feature_dim)
        .with_meta("classes", join_ids(net.classes()))
        .with_params(net.params())
}

pub fn load_extractor(ck: &Checkpoint) -> Result<FeatureExtractor> {
    ck.expect_module("extractor")?;
    let config = ExtractorConfig {
        input_dim: ck.meta_parse("input_dim")?,
        hidden: ck.meta_parse("hidden")?,
        feature_dim: ck.meta_parse("feature_dim")?,
    };
    FeatureExtractor::from_parts(config, parse_ids(ck.meta("classes")?)?, ck.params()?).stage("checkpoint")
}

pub fn save_autoencoder(ae: &Autoencoder) -> Checkpoint {
    Checkpoint::new("autoencoder")
        .with_meta("mode", mode_name(ae.mode()))
        .with_meta("input_dim", ae.input_dim())
        .with_meta("latent_dim", ae.latent_dim())
        .with_params(ae.params())
}

pub fn load_autoencoder(ck: &Checkpoint) -> Result<Autoencoder> {
    ck.expect_module("autoencoder")?;
    let mode = match ck.meta("mode")? {
        "identity" => AutoencoderMode::Identity,
        "linear" => AutoencoderMode::Linear,
        other => return Err(bad(format!("unknown autoencoder mode `{other}`"))),
    };
    Autoencoder::from_parts(mode, ck.meta_parse("input_dim")?, ck.meta_parse("latent_dim")?, ck.params()?)
        .stage("checkpoint")
}

pub fn save_denoiser(net: &Denoiser) -> Checkpoint {
    let c = net.config();
    Checkpoint::new("denoiser")
        .with_meta("latent_dim", c.latent_dim)
        .with_meta("feature_dim", c.feature_dim)
        .with_meta("cond_dim", c.cond_dim)
        .with_meta("time_dim", c.time_dim)
        .with_meta("hidden", c.hidden)
        .with_meta("timesteps", c.timesteps)
        .with_meta("time_period", format!("{:?}", c.time_period))
        .with_params(net.params())
}

pub fn load_denoiser(ck: &Checkpoint) -> Result<Denoiser> {
    ck.expect_module("denoiser")?;
    let config = DenoiserConfig {
        latent_dim: ck.meta_parse("latent_dim")?,
        feature_dim: ck.meta_parse("feature_dim")?,
        cond_dim: ck.meta_parse("cond_dim")?,
        time_dim: ck.meta_parse("time_dim")?,
        hidden: ck.meta_parse("hidden")?,
        timesteps: ck.meta_parse("timesteps")?,
        time_period: ck.meta_parse("time_period")?,
    };
    Denoiser::from_parts(config, ck.params()?).stage("checkpoint")
}

/// One record per seen class: `class.<id>.count` in the header and
/// `class.<id>.mean` / `class.<id>.var` tensors.
pub fn save_bank(bank: &SeenBank) -> Checkpoint {
    let mut ck = Checkpoint::new("stats").with_meta("classes", join_ids(&bank.classes()));
    for s in bank.iter() {
        ck.meta.push((format!("class.{}.count", s.class), s.count.to_string()));
        ck.meta.push((format!("class.{}.provenance", s.class), "seen".to_string()));
        ck.tensors.push((format!("class.{}.mean", s.class), vector(&s.mean)));
        ck.tensors.push((format!("class.{}.var", s.class), vector(&s.var)));
    }
    ck
}

pub fn load_bank(ck: &Checkpoint) -> Result<SeenBank> {
    ck.expect_module("stats")?;
    let mut stats = Vec::new();
    for class in parse_ids(ck.meta("classes")?)? {
        stats.push(ClassStats {
            class,
            mean: ck.tensor(&format!("class.{class}.mean"))?.data().to_vec(),
            var: ck.tensor(&format!("class.{class}.var"))?.data().to_vec(),
            count: ck.meta_parse(&format!("class.{class}.count"))?,
        });
    }
    SeenBank::from_stats(stats).stage("checkpoint")
}

/// Unseen-class distributions keep the log-variance they are optimized in.
pub fn save_unseen(dists: &[UnseenDistribution]) -> Checkpoint {
    let ids: Vec<ClassId> = dists.iter().map(|d| d.class).collect();
    let mut ck = Checkpoint::new("unseen").with_meta("classes", join_ids(&ids));
    for d in dists {
        ck.meta.push((format!("class.{}.provenance", d.class), provenance_name(d.provenance).to_string()));
        ck.meta.push((format!("class.{}.neighbors", d.class), join_ids(&d.neighbors)));
        ck.tensors.push((format!("class.{}.mean", d.class), vector(&d.mean)));
        ck.tensors.push((format!("class.{}.log_var", d.class), vector(&d.log_var)));
    }
    ck
}

pub fn load_unseen(ck: &Checkpoint) -> Result<Vec<UnseenDistribution>> {
    ck.expect_module("unseen")?;
    let mut out = Vec::new();
    for class in parse_ids(ck.meta("classes")?)? {
        let provenance = match ck.meta(&format!("class.{class}.provenance"))? {
            "calibrated" => Provenance::Calibrated,
            "inverted" => Provenance::Inverted,
            other => return Err(bad(format!("unknown provenance `{other}`"))),
        };
        let dist = UnseenDistribution {
            class,
            mean: ck.tensor(&format!("class.{class}.mean"))?.data().to_vec(),
            log_var: ck.tensor(&format!("class.{class}.log_var"))?.data().to_vec(),
            provenance,
            neighbors: parse_ids(ck.meta(&format!("class.{class}.neighbors"))?)?,
        };
        if !dist.is_valid() {
            return Err(bad(format!("class {class} distribution is malformed")));
        }
        out.push(dist);
    }
    Ok(out)
}

fn vector(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).expect("vector shape")
}
