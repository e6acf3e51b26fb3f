use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::auroc;
use crate::predictive::{PredictiveSummary, UncertaintyKind};

pub const DEFAULT_BINS: usize = 30;

/// Equal-width histogram with densities normalized to unit area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub in_density: Vec<f64>,
    pub out_density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub uncertainty_kind: UncertaintyKind,
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
    pub in_mean: f64,
    pub out_mean: f64,
    pub histogram: Histogram,
    /// AUROC of the scores with out-of-distribution samples as positives.
    pub separability_auroc: f64,
}

fn densities(scores: &[f64], lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let b = (((s - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    let norm = scores.len() as f64 * width;
    counts.iter().map(|&c| c as f64 / norm).collect()
}

/// Shared-range histogram of two score sets. A degenerate range is widened
/// to `±0.5` around its value.
pub fn histogram(in_scores: &[f64], out_scores: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let all = in_scores.iter().chain(out_scores);
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    Ok(Histogram {
        edges,
        in_density: densities(in_scores, lo, width, bins),
        out_density: densities(out_scores, lo, width, bins),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn ood_report_from_scores(
    in_scores: &[f64],
    out_scores: &[f64],
    kind: UncertaintyKind,
    bins: usize,
) -> Result<OodReport> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::Invalid("OOD report needs non-empty in- and out-of-distribution sets".into()));
    }
    let scores: Vec<f64> = in_scores.iter().chain(out_scores).copied().collect();
    let labels: Vec<bool> = (0..scores.len()).map(|i| i >= in_scores.len()).collect();
    Ok(OodReport {
        uncertainty_kind: kind,
        in_scores: in_scores.to_vec(),
        out_scores: out_scores.to_vec(),
        in_mean: mean(in_scores),
        out_mean: mean(out_scores),
        histogram: histogram(in_scores, out_scores, bins)?,
        separability_auroc: auroc(&scores, &labels)?,
    })
}

pub fn ood_report(
    in_summary: &PredictiveSummary,
    out_summary: &PredictiveSummary,
    kind: UncertaintyKind,
    bins: usize,
) -> Result<OodReport> {
    ood_report_from_scores(in_summary.uncertainty(kind), out_summary.uncertainty(kind), kind, bins)
}
