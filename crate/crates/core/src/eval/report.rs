//! Plot-ready outputs.
//!
//! * Metrics CSV: `curve_id,x,value,n`, one row per curve point. `x` is the
//!   retained fraction (or the confidence threshold for
//!   `accuracy-vs-confidence`), `n` the number of samples behind the value,
//!   and an empty `value` marks a metric that is undefined there.
//! * Histogram CSV: `bin_left,bin_right,in_density,out_density`.
//! * Prediction dump CSV: `id,label,confidence,predictive_entropy,bald`,
//!   then `mean_p{k}` for each class and `p{t}_{k}` for each draw and class.
//!   An unknown label is left empty.
//!
//! Reals are printed in Rust's shortest round-trip form, so a dump read back
//! reproduces the probability stack exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::curves::{
    accuracy_of, accuracy_vs_confidence, retained_data_curve, ConfidenceRow, MetricCurve, MetricKind,
};
use crate::eval::metrics::{macro_aupr, macro_auroc};
use crate::eval::ood::OodReport;
use crate::predictive::{PredictiveSummary, UncertaintyKind};
use crate::tensor::Tensor;

pub const AGGREGATION: &str = "macro one-vs-rest over mean_probs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub dataset: String,
    pub samples: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// How multiclass AUPR/AUROC are aggregated.
    pub aggregation: String,
    pub entropy_units: String,
}

impl ReportMetadata {
    pub fn new(dataset: impl Into<String>, samples: usize, mc_samples: usize, seed: u64) -> Self {
        ReportMetadata {
            dataset: dataset.into(),
            samples,
            mc_samples,
            seed,
            aggregation: AGGREGATION.into(),
            entropy_units: "nats".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub accuracy: f64,
    pub macro_aupr: Option<f64>,
    pub macro_auroc: Option<f64>,
    pub mean_bald: f64,
    pub mean_entropy: f64,
    pub curves: Vec<MetricCurve>,
    pub accuracy_vs_confidence: Vec<ConfidenceRow>,
}

/// Every metric × uncertainty retained-data curve plus the confidence table.
pub fn build_metrics_report(
    summary: &PredictiveSummary,
    labels: &[usize],
    fractions: &[f64],
    thresholds: &[f64],
    metadata: ReportMetadata,
) -> Result<MetricsReport> {
    let mut curves = Vec::new();
    for metric in [MetricKind::Accuracy, MetricKind::Aupr, MetricKind::Auroc] {
        for u in [UncertaintyKind::Bald, UncertaintyKind::Entropy] {
            curves.push(retained_data_curve(summary, labels, fractions, metric, u)?);
        }
    }
    let all: Vec<usize> = (0..summary.len()).collect();
    let n = summary.len() as f64;
    Ok(MetricsReport {
        metadata,
        accuracy: accuracy_of(summary, labels, &all),
        macro_aupr: macro_aupr(&summary.mean_probs, labels)?,
        macro_auroc: macro_auroc(&summary.mean_probs, labels)?,
        mean_bald: summary.bald.iter().sum::<f64>() / n,
        mean_entropy: summary.predictive_entropy.iter().sum::<f64>() / n,
        curves,
        accuracy_vs_confidence: accuracy_vs_confidence(summary, labels, thresholds)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(mut w: impl Write, report: &MetricsReport) -> std::io::Result<()> {
    writeln!(w, "curve_id,x,value,n")?;
    for c in &report.curves {
        let id = c.id();
        for ((x, v), n) in c.retained_fractions.iter().zip(&c.metric_values).zip(&c.counts) {
            writeln!(w, "{id},{x},{},{n}", opt(*v))?;
        }
    }
    for r in &report.accuracy_vs_confidence {
        writeln!(w, "accuracy-vs-confidence,{},{},{}", r.threshold, opt(r.accuracy), r.count)?;
    }
    Ok(())
}

pub fn write_histogram_csv(mut w: impl Write, report: &OodReport) -> std::io::Result<()> {
    writeln!(w, "bin_left,bin_right,in_density,out_density")?;
    let h = &report.histogram;
    for (i, e) in h.edges.windows(2).enumerate() {
        writeln!(w, "{},{},{},{}", e[0], e[1], h.in_density[i], h.out_density[i])?;
    }
    Ok(())
}

/// Writes one row per input; `labels` may be absent.
pub fn write_prediction_dump(
    mut w: impl Write,
    stack: &Tensor,
    summary: &PredictiveSummary,
    labels: Option<&[usize]>,
) -> std::io::Result<()> {
    let (t, b, k) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    write!(w, "id,label,confidence,predictive_entropy,bald")?;
    for c in 0..k {
        write!(w, ",mean_p{c}")?;
    }
    for ti in 0..t {
        for c in 0..k {
            write!(w, ",p{ti}_{c}")?;
        }
    }
    writeln!(w)?;
    let data = stack.data();
    for i in 0..b {
        let label = labels.map(|l| l[i].to_string()).unwrap_or_default();
        write!(
            w,
            "{i},{label},{},{},{}",
            summary.confidence[i], summary.predictive_entropy[i], summary.bald[i]
        )?;
        for p in summary.mean_probs.row(i) {
            write!(w, ",{p}")?;
        }
        for ti in 0..t {
            for p in &data[(ti * b + i) * k..(ti * b + i + 1) * k] {
                write!(w, ",{p}")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// A prediction dump read back: the stack `[T, B, K]` and per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump {
    pub stack: Tensor,
    pub labels: Vec<Option<usize>>,
}

impl PredictionDump {
    /// All labels, or an error if any is missing.
    pub fn require_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Invalid(format!("prediction dump row {i} has no label"))))
            .collect()
    }
}

pub fn read_prediction_dump(r: impl BufRead) -> Result<PredictionDump> {
    let bad = |line: usize, what: &str| Error::Invalid(format!("prediction dump line {line}: {what}"));
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad(1, "empty file"))?
        .map_err(|e| bad(1, &e.to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let k = cols.iter().filter(|c| c.starts_with("mean_p")).count();
    let draws = cols.len().saturating_sub(5 + k);
    if cols.len() < 5 || cols[..5] != ["id", "label", "confidence", "predictive_entropy", "bald"] || k == 0 || draws == 0 || draws % k != 0 {
        return Err(bad(1, "unrecognized header"));
    }
    let t = draws / k;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(n + 2, &e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(bad(n + 2, &format!("{} fields, expected {}", fields.len(), cols.len())));
        }
        labels.push(if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse().map_err(|_| bad(n + 2, "bad label"))?)
        });
        let probs = fields[5 + k..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(n + 2, &format!("bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(probs);
    }
    let b = rows.len();
    if b == 0 {
        return Err(bad(2, "no rows"));
    }
    let mut data = vec![0.0; t * b * k];
    for (i, row) in rows.iter().enumerate() {
        for ti in 0..t {
            data[(ti * b + i) * k..(ti * b + i + 1) * k].copy_from_slice(&row[ti * k..(ti + 1) * k]);
        }
    }
    Ok(PredictionDump {
        stack: Tensor::new(vec![t, b, k], data)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictive::summarize;

    #[test]
    fn dump_round_trips() {
        let stack = Tensor::new(
            vec![2, 2, 3],
            vec![0.1, 0.2, 0.7, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.3, 0.3, 0.4, 0.05, 0.9, 0.05],
        )
        .unwrap();
        let s = summarize(&stack).unwrap();
        let mut buf = Vec::new();
        write_prediction_dump(&mut buf, &stack, &s, Some(&[2, 1])).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,label,confidence,predictive_entropy,bald,mean_p0,mean_p1,mean_p2,p0_0,"));
        let back = read_prediction_dump(&buf[..]).unwrap();
        assert_eq!(back.stack, stack);
        assert_eq!(back.labels, vec![Some(2), Some(1)]);
    }

    #[test]
    fn metrics_csv_marks_missing_values() {
        let stack = Tensor::new(vec![1, 2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let s = summarize(&stack).unwrap();
        let report = build_metrics_report(&s, &[0, 1], &[0.5, 1.0], &[0.0, 0.95], ReportMetadata::new("toy", 2, 1, 0)).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("curve_id,x,value,n\n"));
        assert!(text.contains("auroc-bald,0.5,,1\n"));
        assert!(text.contains("accuracy-vs-confidence,0.95,,0\n"));
        assert_eq!(report.metadata.aggregation, AGGREGATION);
    }
}
