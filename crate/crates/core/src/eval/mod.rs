//! Evaluation protocol: ranking metrics, retained-data curves, OOD
//! separation and accuracy-vs-confidence tables.

pub mod curves;
pub mod metrics;
pub mod ood;
pub mod report;

pub use curves::{
    accuracy_vs_confidence, default_fractions, default_thresholds, retained_count, retained_data_curve,
    ConfidenceRow, MetricCurve, MetricKind,
};
pub use metrics::{aupr, auroc, macro_aupr, macro_auroc};
pub use ood::{histogram, ood_report, ood_report_from_scores, Histogram, OodReport, DEFAULT_BINS};
pub use report::{
    build_metrics_report, read_prediction_dump, write_histogram_csv, write_metrics_csv, write_prediction_dump,
    MetricsReport, PredictionDump, ReportMetadata,
};
