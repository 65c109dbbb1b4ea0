//! Localization error statistics, CDFs, attention summaries and exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataio::{compress_dataset, PdpMatrix};
use crate::error::{Error, Result};
use crate::model::{average_attention, forward, predict, Checkpoint, ModelConfig, ModelParams};

/// Percentile levels reported in every summary.
pub const REPORTED_PERCENTILES: [f64; 4] = [50.0, 67.0, 80.0, 90.0];

/// Linear interpolation between order statistics at rank `(n - 1) q / 100`.
pub fn percentile(errors: &[f64], q: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidInput(format!("percentile level {q} outside [0, 100]")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_percentile(&sorted, q))
}

fn sorted_percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Relative improvement of `a` over baseline `b`, in percent.
pub fn improvement_pct(a: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::InvalidInput(format!("baseline must be > 0, got {b}")));
    }
    Ok(100.0 * (b - a) / b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub p50: f64,
    pub p67: f64,
    pub p80: f64,
    pub p90: f64,
    /// `(error, fraction of samples with error <= it)`, one point per sample.
    pub cdf: Vec<(f64, f64)>,
}

impl ErrorSummary {
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = errors.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidInput(format!("error value {bad} is not a finite distance")));
        }
        let n = errors.len() as f64;
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n;
        let std = (sorted.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        let cdf = sorted.iter().enumerate().map(|(i, e)| (*e, (i + 1) as f64 / n)).collect();
        Ok(Self {
            mean,
            std,
            p50: sorted_percentile(&sorted, 50.0),
            p67: sorted_percentile(&sorted, 67.0),
            p80: sorted_percentile(&sorted, 80.0),
            p90: sorted_percentile(&sorted, 90.0),
            cdf,
            errors,
        })
    }

    pub fn from_predictions(predictions: &[[f64; 2]], labels: &[[f64; 2]]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::shape(
                "ErrorSummary",
                format!("{} predictions for {} labels", predictions.len(), labels.len()),
            ));
        }
        Self::from_errors(predictions.iter().zip(labels).map(|(p, y)| euclidean(*p, *y)).collect())
    }

    pub fn percentiles(&self) -> [f64; 4] {
        [self.p50, self.p67, self.p80, self.p90]
    }
}

pub fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Predictions and errors of a checkpoint's EMA weights on raw samples.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<[f64; 2]>,
    pub labels: Vec<[f64; 2]>,
    pub summary: ErrorSummary,
}

pub fn evaluate(checkpoint: &Checkpoint, dataset: &[PdpMatrix]) -> Result<Evaluation> {
    evaluate_params(&checkpoint.ema, checkpoint.config(), checkpoint, dataset)
}

/// Like [`evaluate`] but with explicit weights, e.g. the raw ones.
pub fn evaluate_params(params: &ModelParams, config: &ModelConfig, checkpoint: &Checkpoint, dataset: &[PdpMatrix]) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = compress_dataset(dataset, &checkpoint.header.compression)?;
    let predictions = predict(params, config, &inputs)?;
    let labels: Vec<[f64; 2]> = dataset.iter().map(|s| s.label).collect();
    let summary = ErrorSummary::from_predictions(&predictions, &labels)?;
    Ok(Evaluation {
        predictions,
        labels,
        summary,
    })
}

/// Errors of always predicting the mean training label.
pub fn mean_baseline(train: &[PdpMatrix], test: &[PdpMatrix]) -> Result<ErrorSummary> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = train.len() as f64;
    let mean = [
        train.iter().map(|s| s.label[0]).sum::<f64>() / n,
        train.iter().map(|s| s.label[1]).sum::<f64>() / n,
    ];
    ErrorSummary::from_errors(test.iter().map(|s| euclidean(mean, s.label)).collect())
}

/// Per-layer sensor attention, averaged over heads, query rows and samples.
/// `inputs` must already be preprocessed the way the model expects.
pub fn sensor_attention_report(params: &ModelParams, config: &ModelConfig, inputs: &[PdpMatrix], layers: &[usize]) -> Result<Vec<Vec<f64>>> {
    if !config.tokenizer.is_sensor_aligned() {
        return Err(Error::Unsupported(format!(
            "sensor attention needs sensor-aligned tokens, model uses {}",
            config.tokenizer
        )));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(bad) = layers.iter().find(|l| **l >= config.n_layers) {
        return Err(Error::InvalidInput(format!("layer {bad} out of range for {} layers", config.n_layers)));
    }
    let sensors = config.sensors;
    let mut out = vec![vec![0.0; sensors]; layers.len()];
    for pdp in inputs {
        let (_, record) = forward(params, config, pdp, true)?;
        let record = record.expect("attention requested");
        for (acc, &layer) in out.iter_mut().zip(layers) {
            let scores = average_attention(&record, layer)?;
            // a trailing class token holds no sensor; renormalize over sensors
            let sensor_scores = &scores[..sensors];
            let total: f64 = sensor_scores.iter().sum();
            for (a, s) in acc.iter_mut().zip(sensor_scores) {
                *a += s / total;
            }
        }
    }
    let n = inputs.len() as f64;
    out.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(out)
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `sample_id,x,y,x_hat,y_hat,error_m`.
pub fn write_errors_csv(path: impl AsRef<Path>, eval: &Evaluation) -> Result<()> {
    let mut s = String::from("sample_id,x,y,x_hat,y_hat,error_m\n");
    for (i, ((y, p), e)) in eval.labels.iter().zip(&eval.predictions).zip(&eval.summary.errors).enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{},{}", y[0], y[1], p[0], p[1], e);
    }
    write(path.as_ref(), s)
}

/// One row per named summary: `name,n,mean,std,p50,p67,p80,p90`.
pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[(String, &ErrorSummary)]) -> Result<()> {
    let mut s = String::from("name,n,mean_m,std_m,p50_m,p67_m,p80_m,p90_m\n");
    for (name, e) in rows {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{}",
            e.errors.len(),
            e.mean,
            e.std,
            e.p50,
            e.p67,
            e.p80,
            e.p90
        );
    }
    write(path.as_ref(), s)
}

/// `sensor,score` for one layer.
pub fn write_attention_csv(path: impl AsRef<Path>, scores: &[f64]) -> Result<()> {
    let mut s = String::from("sensor,score\n");
    for (i, v) in scores.iter().enumerate() {
        let _ = writeln!(s, "{},{v}", i + 1);
    }
    write(path.as_ref(), s)
}

/// `error_m,fraction` points of the empirical CDF.
pub fn write_cdf_csv(path: impl AsRef<Path>, summary: &ErrorSummary) -> Result<()> {
    let mut s = String::from("error_m,fraction\n");
    for (e, f) in &summary.cdf {
        let _ = writeln!(s, "{e},{f}");
    }
    write(path.as_ref(), s)
}

const SVG_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Step plot of one or more empirical CDFs.
pub fn write_cdf_svg(path: impl AsRef<Path>, curves: &[(String, &ErrorSummary)]) -> Result<()> {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let x_max = curves
        .iter()
        .filter_map(|(_, s)| s.cdf.last().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let px = |e: f64| m + (w - 2.0 * m) * e / x_max;
    let py = |f: f64| h - m - (h - 2.0 * m) * f;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let e = x_max * f;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{e:.2}</text>"#, px(e), h - m + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{f:.2}</text>"#, m - 6.0, py(f) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">error (m)</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">CDF</text>"#, h / 2.0, h / 2.0);
    for (k, (name, summary)) in curves.iter().enumerate() {
        let color = SVG_COLORS[k % SVG_COLORS.len()];
        let mut d = format!("M{},{}", px(0.0), py(0.0));
        let mut last = 0.0;
        for (e, f) in &summary.cdf {
            let _ = write!(d, " H{:.2} V{:.2}", px(*e), py(*f));
            last = *f;
        }
        debug_assert!((last - 1.0).abs() < 1e-12);
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name} (p90 {:.2} m)</text>"#,
            w - m - 180.0,
            py(0.3) - 16.0 * k as f64,
            summary.p90
        );
    }
    s.push_str("</svg>\n");
    write(path.as_ref(), s)
}
