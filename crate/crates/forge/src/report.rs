//! Metric report CSV and text summaries.
//!
//! CSV columns, in order:
//! `format_version,row,class,frechet,diversity,fewshot_ways,fewshot_shots,fewshot_augmented,fewshot_baseline`.
//! One `row=class` line per unseen class, then one `row=aggregate` line
//! holding the class means and, if present, the few-shot result. Empty
//! cells mean "not applicable". Floats use Rust's shortest round-trip form.

use cdm_core::metrics::MetricReport;

use crate::pipeline::Ablation;

pub const REPORT_FORMAT_VERSION: u32 = 1;

pub const CSV_HEADER: &str =
    "format_version,row,class,frechet,diversity,fewshot_ways,fewshot_shots,fewshot_augmented,fewshot_baseline";

pub fn report_csv(report: &MetricReport) -> String {
    let v = REPORT_FORMAT_VERSION;
    let mut out = format!("{CSV_HEADER}\n");
    for c in &report.classes {
        out.push_str(&format!("{v},class,{},{:?},{:?},,,,\n", c.class, c.frechet, c.diversity));
    }
    let (f, d) = report.aggregate();
    let fs = report
        .few_shot
        .as_ref()
        .map_or_else(|| ",,,".to_string(), |r| format!("{},{},{:?},{:?}", r.ways, r.shots, r.augmented, r.baseline));
    out.push_str(&format!("{v},aggregate,,{f:?},{d:?},{fs}\n"));
    out
}

pub fn report_summary(report: &MetricReport, config_hash: &str) -> String {
    let mut out =
        format!("format_version = {REPORT_FORMAT_VERSION}\nseed = {}\nconfig_hash = {config_hash}\n", report.seed);
    for c in &report.classes {
        out.push_str(&format!("class {}: frechet {:.6} diversity {:.6}\n", c.class, c.frechet, c.diversity));
    }
    let (f, d) = report.aggregate();
    out.push_str(&format!("aggregate: frechet {f:.6} diversity {d:.6}\n"));
    if let Some(fs) = &report.few_shot {
        out.push_str(&format!(
            "few-shot {}-way {}-shot over {} episodes: augmented {:.4} baseline {:.4}\n",
            fs.ways,
            fs.shots,
            fs.episodes.len(),
            fs.augmented,
            fs.baseline
        ));
    }
    out
}

pub fn ablation_summary(ab: &Ablation, config_hash: &str) -> String {
    let (fo, d_o) = ab.without.aggregate();
    let (fw, dw) = ab.with.aggregate();
    let (df, dd) = ab.deltas();
    let mut out =
        format!("format_version = {REPORT_FORMAT_VERSION}\nseed = {}\nconfig_hash = {config_hash}\n", ab.with.seed);
    out.push_str(&format!("without inversion: frechet {fo:.6} diversity {d_o:.6}\n"));
    out.push_str(&format!("with inversion: frechet {fw:.6} diversity {dw:.6}\n"));
    out.push_str(&format!("delta (with - without): frechet {df:+.6} diversity {dd:+.6}\n"));
    for (class, before, after) in &ab.mean_errors {
        out.push_str(&format!("class {class}: mean error {before:.6} -> {after:.6}\n"));
    }
    out
}
