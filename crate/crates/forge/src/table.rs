//! Dataset binary table and the small text records that accompany it.
//!
//! Table layout: a text header, then `rows` records of `dim` little-endian
//! `f64` features followed by a little-endian `u32` label.
//!
//! ```text
//! format_version = 1
//! rows = 3072
//! dim = 16
//! label_column = u32
//! end
//! ```

use std::path::Path;

use cdm_core::synth::{Dataset, Episode, SplitSpec};
use cdm_core::{ClassId, Tensor};

use crate::checkpoint::{expect_version, read_f64s, split_header};
use crate::error::{ForgeError, Result, StageContext};

pub const TABLE_FORMAT_VERSION: u32 = 1;
pub const RECORD_FORMAT_VERSION: u32 = 1;

pub fn dataset_to_bytes(data: &Dataset) -> Vec<u8> {
    let dim = data.dim();
    let mut out = format!(
        "format_version = {TABLE_FORMAT_VERSION}\nrows = {}\ndim = {dim}\nlabel_column = u32\nend\n",
        data.len()
    )
    .into_bytes();
    for (row, label) in data.x.row_iter().zip(&data.labels) {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&label.to_le_bytes());
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let bad = |m: String| ForgeError::format("dataset table", m);
    let (lines, payload) = split_header(bytes, "dataset table")?;
    expect_version(lines.first().copied(), TABLE_FORMAT_VERSION, "dataset table")?;
    let field = |key: &str| -> Result<&str> {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
            .ok_or_else(|| bad(format!("header lacks `{key}`")))
    };
    let rows: usize = field("rows")?.parse().map_err(|_| bad("bad row count".into()))?;
    let dim: usize = field("dim")?.parse().map_err(|_| bad("bad dim".into()))?;
    if field("label_column")? != "u32" {
        return Err(bad("only u32 label columns are supported".into()));
    }
    let stride = dim * 8 + 4;
    if payload.len() != rows * stride {
        return Err(bad(format!("expected {} payload bytes, found {}", rows * stride, payload.len())));
    }
    let mut x = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    for rec in payload.chunks_exact(stride) {
        x.extend(read_f64s(&rec[..dim * 8]));
        labels.push(ClassId::from_le_bytes(rec[dim * 8..].try_into().expect("4 label bytes")));
    }
    Dataset::new(Tensor::matrix(rows, dim, x).stage("dataset table")?, labels).stage("dataset table")
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(data)).map_err(|e| ForgeError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&std::fs::read(path).map_err(|e| ForgeError::io(path, e))?)
}

fn ids(v: &[impl ToString]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &'static str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| v.parse().map_err(|_| ForgeError::format(what, format!("bad entry `{v}`")))).collect()
}

fn record_lines<'a>(text: &'a str, what: &'static str) -> Result<Vec<(&'a str, &'a str)>> {
    let mut lines = text.lines();
    expect_version(lines.next(), RECORD_FORMAT_VERSION, what)?;
    lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split_once(" = ").ok_or_else(|| ForgeError::format(what, format!("bad line `{l}`"))))
        .collect()
}

fn lookup<'a>(pairs: &[(&str, &'a str)], key: &str, what: &'static str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| ForgeError::format(what, format!("missing `{key}`")))
}

pub fn split_to_text(split: &SplitSpec) -> String {
    format!("format_version = {RECORD_FORMAT_VERSION}\nseen = {}\nunseen = {}\n", ids(&split.seen), ids(&split.unseen))
}

pub fn split_from_text(text: &str) -> Result<SplitSpec> {
    let pairs = record_lines(text, "split record")?;
    Ok(SplitSpec {
        seen: parse_list(lookup(&pairs, "seen", "split record")?, "split record")?,
        unseen: parse_list(lookup(&pairs, "unseen", "split record")?, "split record")?,
    })
}

/// One `episode.<class>.{seed,support,query}` triple per episode.
pub fn episodes_to_text(episodes: &[Episode]) -> String {
    let mut out = format!(
        "format_version = {RECORD_FORMAT_VERSION}\nclasses = {}\n",
        ids(&episodes.iter().map(|e| e.class).collect::<Vec<_>>())
    );
    for e in episodes {
        out.push_str(&format!("episode.{}.seed = {}\n", e.class, e.seed));
        out.push_str(&format!("episode.{}.support = {}\n", e.class, ids(&e.support)));
        out.push_str(&format!("episode.{}.query = {}\n", e.class, ids(&e.query)));
    }
    out
}

pub fn episodes_from_text(text: &str) -> Result<Vec<Episode>> {
    const WHAT: &str = "episode record";
    let pairs = record_lines(text, WHAT)?;
    let classes: Vec<ClassId> = parse_list(lookup(&pairs, "classes", WHAT)?, WHAT)?;
    classes
        .into_iter()
        .map(|class| {
            let get = |f: &str| lookup(&pairs, &format!("episode.{class}.{f}"), WHAT);
            Ok(Episode {
                class,
                seed: get("seed")?.parse().map_err(|_| ForgeError::format(WHAT, "bad seed"))?,
                support: parse_list(get("support")?, WHAT)?,
                query: parse_list(get("query")?, WHAT)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 1e-300, 2.0, f64::MAX, -0.0]).unwrap();
        let data = Dataset::new(x, vec![7, 0, u32::MAX]).unwrap();
        let bytes = dataset_to_bytes(&data);
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(dataset_to_bytes(&back), bytes);
        assert_eq!(back.labels, data.labels);
    }

    #[test]
    fn dataset_rejects_short_payload() {
        let data = Dataset::new(Tensor::matrix(1, 1, vec![1.0]).unwrap(), vec![1]).unwrap();
        let bytes = dataset_to_bytes(&data);
        assert!(dataset_from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn episode_round_trip() {
        let eps = vec![
            Episode { class: 3, support: vec![1, 2, 3], query: vec![4, 5], seed: 99 },
            Episode { class: 9, support: vec![0], query: vec![], seed: 1 },
        ];
        assert_eq!(episodes_from_text(&episodes_to_text(&eps)).unwrap(), eps);
        let split = SplitSpec { seen: vec![0, 1], unseen: vec![2] };
        assert_eq!(split_from_text(&split_to_text(&split)).unwrap(), split);
    }
}
