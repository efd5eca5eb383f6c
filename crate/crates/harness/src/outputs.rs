//! Metric, manifest, heatmap and histogram files.

use std::fs;
use std::io::Write;
use std::path::Path;

use cal_core::data::Vocab;
use cal_core::stats;
use cal_core::train::{ExperimentConfig, MetricsRecord, WeightReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: [&str; 13] = [
    "step",
    "train_loss",
    "acc_overall",
    "acc_correlated",
    "acc_contradictory_true",
    "delta_correlated_mean",
    "delta_correlated_count",
    "delta_irrelevant_mean",
    "delta_irrelevant_count",
    "delta_contradictory_mean",
    "delta_contradictory_count",
    "separation_auc",
    "fallbacks",
];

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| HarnessError::io("<csv buffer>")(e.into_error()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_row(r: &MetricsRecord) -> Vec<String> {
    vec![
        r.step.to_string(),
        r.train_loss.to_string(),
        opt(r.acc_overall),
        opt(r.acc_correlated),
        opt(r.acc_contradictory_true),
        opt(r.delta_correlated.mean),
        r.delta_correlated.count.to_string(),
        opt(r.delta_irrelevant.mean),
        r.delta_irrelevant.count.to_string(),
        opt(r.delta_contradictory.mean),
        r.delta_contradictory.count.to_string(),
        opt(r.separation_auc),
        r.fallbacks.to_string(),
    ]
}

/// Metrics as CSV. Wall-clock times are left out so the bytes depend only
/// on the config.
pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record(metrics_row(r))?;
    }
    finish(w)
}

pub fn timing_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "wall_clock_s"])?;
    for r in records {
        w.write_record([r.step.to_string(), opt(r.wall_clock_s)])?;
    }
    finish(w)
}

/// Git-style object hash: sha256 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub config: &'a ExperimentConfig,
    pub config_hash: String,
    pub metrics_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub crate_version: &'static str,
}

pub fn manifest(config: &ExperimentConfig, metrics: &[u8]) -> Result<String> {
    let canonical = serde_json::to_vec(config)?;
    let m = Manifest {
        config,
        config_hash: content_hash(&canonical),
        metrics_hash: content_hash(metrics),
        seed: config.optim.seed,
        steps: config.optim.steps,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    Ok(serde_json::to_string_pretty(&m)?)
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    fs::write(path, bytes).map_err(HarnessError::io(path))
}

#[derive(Debug, Serialize)]
struct HeatmapToken<'a> {
    position: usize,
    token: usize,
    word: &'a str,
    kind: Option<&'static str>,
    trainable: bool,
    delta: f64,
    clamped: f64,
    pooled: f64,
}

#[derive(Debug, Serialize)]
struct Heatmap<'a> {
    sample_index: usize,
    fell_back: bool,
    caption: String,
    tokens: Vec<HeatmapToken<'a>>,
}

fn heatmap_tokens<'a>(report: &WeightReport, vocab: &'a Vocab) -> Vec<HeatmapToken<'a>> {
    report
        .records
        .iter()
        .map(|r| HeatmapToken {
            position: r.position,
            token: r.token,
            word: vocab.word(r.token).unwrap_or("?"),
            kind: r.kind.map(|k| k.as_str()),
            trainable: r.trainable,
            delta: r.delta,
            clamped: r.clamped,
            pooled: r.pooled,
        })
        .collect()
}

pub fn heatmap_json(report: &WeightReport, vocab: &Vocab) -> Result<String> {
    let tokens = heatmap_tokens(report, vocab);
    let caption = tokens.iter().map(|t| t.word).collect::<Vec<_>>().join(" ");
    Ok(serde_json::to_string_pretty(&Heatmap {
        sample_index: report.sample_index,
        fell_back: report.fell_back,
        caption,
        tokens,
    })?)
}

pub fn heatmap_csv(report: &WeightReport, vocab: &Vocab) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "position",
        "token",
        "word",
        "kind",
        "trainable",
        "delta",
        "clamped",
        "pooled",
    ])?;
    for t in heatmap_tokens(report, vocab) {
        w.write_record([
            t.position.to_string(),
            t.token.to_string(),
            t.word.to_string(),
            t.kind.unwrap_or("").to_string(),
            t.trainable.to_string(),
            t.delta.to_string(),
            t.clamped.to_string(),
            t.pooled.to_string(),
        ])?;
    }
    finish(w)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    pub below_threshold: usize,
    pub threshold: f64,
    pub fraction_below: Option<f64>,
    /// Wilson 95% interval for `fraction_below`.
    pub fraction_ci: Option<(f64, f64)>,
    pub samples: usize,
}

/// Fixed-width bins over `[lo, hi)`; values outside land in the end bins.
pub fn histogram(
    values: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
    threshold: f64,
    samples: usize,
) -> Histogram {
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = ((v - lo) / width).floor();
        let b = b.clamp(0.0, (bins - 1) as f64);
        counts[b as usize] += 1;
    }
    let below = values.iter().filter(|&&v| v < threshold).count();
    Histogram {
        edges,
        counts,
        total: values.len(),
        below_threshold: below,
        threshold,
        fraction_below: (!values.is_empty()).then(|| below as f64 / values.len() as f64),
        fraction_ci: stats::wilson_interval(below, values.len(), 1.959963984540054),
        samples,
    }
}

pub fn histogram_csv(h: &Histogram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lo", "hi", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([
            h.edges[i].to_string(),
            h.edges[i + 1].to_string(),
            c.to_string(),
        ])?;
    }
    finish(w)
}

/// Serializes rows of any shape to CSV with the given header.
pub fn table_csv<R: AsRef<[String]>>(header: &[&str], rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    finish(w)
}

pub fn print_table<R: AsRef<[String]>>(
    out: &mut impl Write,
    header: &[&str],
    rows: &[R],
) -> std::io::Result<()> {
    writeln!(out, "{}", header.join("\t"))?;
    for r in rows {
        writeln!(out, "{}", r.as_ref().join("\t"))?;
    }
    Ok(())
}
