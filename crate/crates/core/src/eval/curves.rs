use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{macro_aupr, macro_auroc};
use crate::predictive::{PredictiveSummary, UncertaintyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Aupr,
    Auroc,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Aupr => "aupr",
            MetricKind::Auroc => "auroc",
        })
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "aupr" => Ok(MetricKind::Aupr),
            "auroc" => Ok(MetricKind::Auroc),
            other => Err(Error::Invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// A metric recomputed on the most certain fraction of the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub metric_kind: MetricKind,
    pub uncertainty_kind: UncertaintyKind,
    pub retained_fractions: Vec<f64>,
    /// `None` where the metric is undefined on the kept set.
    pub metric_values: Vec<Option<f64>>,
    /// Size of each kept set.
    pub counts: Vec<usize>,
}

impl MetricCurve {
    /// `"{metric}-{uncertainty}"`, e.g. `accuracy-bald`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.metric_kind, self.uncertainty_kind)
    }

    pub fn value_at(&self, fraction: f64) -> Option<f64> {
        self.retained_fractions
            .iter()
            .position(|&f| (f - fraction).abs() < 1e-12)
            .and_then(|i| self.metric_values[i])
    }
}

/// `0.50, 0.55, ..., 1.00`.
pub fn default_fractions() -> Vec<f64> {
    (10..=20).map(|i| f64::from(i) / 20.0).collect()
}

/// `⌈f · n⌉`, tolerant of representation error in `f`.
pub fn retained_count(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

pub fn accuracy_of(summary: &PredictiveSummary, labels: &[usize], keep: &[usize]) -> f64 {
    let k = summary.num_classes();
    let correct = keep
        .iter()
        .filter(|&&i| crate::nn::loss::argmax(&summary.mean_probs.data()[i * k..(i + 1) * k]) == labels[i])
        .count();
    correct as f64 / keep.len() as f64
}

fn metric_on(summary: &PredictiveSummary, labels: &[usize], keep: &[usize], metric: MetricKind) -> Result<Option<f64>> {
    if metric == MetricKind::Accuracy {
        return Ok(Some(accuracy_of(summary, labels, keep)));
    }
    let probs = summary.mean_probs.select_outer(keep);
    let kept_labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    match metric {
        MetricKind::Aupr => macro_aupr(&probs, &kept_labels),
        _ => macro_auroc(&probs, &kept_labels),
    }
}

fn check_labels(summary: &PredictiveSummary, labels: &[usize]) -> Result<()> {
    if labels.len() != summary.len() || summary.is_empty() {
        return Err(Error::shape(
            "evaluation",
            format!("{} labels for {} predictions", labels.len(), summary.len()),
        ));
    }
    let k = summary.num_classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok(())
}

/// For each fraction `f`, keeps the `⌈fN⌉` samples of lowest uncertainty
/// (ties in input order) and evaluates `metric` on them. Multiclass AUPR and
/// AUROC are macro one-vs-rest averages over `mean_probs`.
pub fn retained_data_curve(
    summary: &PredictiveSummary,
    labels: &[usize],
    fractions: &[f64],
    metric: MetricKind,
    uncertainty: UncertaintyKind,
) -> Result<MetricCurve> {
    check_labels(summary, labels)?;
    if fractions.is_empty() {
        return Err(Error::Invalid("no retained fractions".into()));
    }
    for w in fractions.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Invalid("retained fractions must be strictly increasing".into()));
        }
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Invalid(format!("retained fraction {f} outside (0, 1]")));
    }
    let u = summary.uncertainty(uncertainty);
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));

    let mut values = Vec::with_capacity(fractions.len());
    let mut counts = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let n = retained_count(f, order.len());
        values.push(metric_on(summary, labels, &order[..n], metric)?);
        counts.push(n);
    }
    Ok(MetricCurve {
        metric_kind: metric,
        uncertainty_kind: uncertainty,
        retained_fractions: fractions.to_vec(),
        metric_values: values,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub threshold: f64,
    /// `None` when no sample reaches the threshold.
    pub accuracy: Option<f64>,
    pub count: usize,
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Accuracy on `{confidence ≥ τ}` for each threshold `τ`.
pub fn accuracy_vs_confidence(
    summary: &PredictiveSummary,
    labels: &[usize],
    thresholds: &[f64],
) -> Result<Vec<ConfidenceRow>> {
    check_labels(summary, labels)?;
    if let Some(t) = thresholds.iter().find(|&&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::Invalid(format!("confidence threshold {t} outside [0, 1]")));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let keep: Vec<usize> = (0..summary.len()).filter(|&i| summary.confidence[i] >= t).collect();
            ConfidenceRow {
                threshold: t,
                accuracy: (!keep.is_empty()).then(|| accuracy_of(summary, labels, &keep)),
                count: keep.len(),
            }
        })
        .collect())
}
