use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use moped_core::data::{CheckpointContainer, Dataset};
use moped_core::eval::{
    build_metrics_report, ood_report, read_prediction_dump, write_histogram_csv, write_metrics_csv,
    write_prediction_dump, MetricsReport, ReportMetadata,
};
use moped_core::moped::{build_moped_init_for, random_prior_init};
use moped_core::nn::{evaluate_accuracy, train_mle, ModelGraph};
use moped_core::predictive::{mc_predict_dataset, summarize, PredictiveSummary};
use moped_core::variational::{train_vi, VariationalCheckpoint, VariationalMeta};

use crate::config::RunConfig;

/// Errors the user can fix by changing the invocation; exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Moped,
    Random,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Creates the output directory and records the resolved configuration.
pub fn prepare_out(config: &RunConfig) -> Result<PathBuf> {
    let out = config.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml()?)?;
    Ok(out)
}

fn graph_for(config: &RunConfig, data: &Dataset) -> Result<ModelGraph> {
    config.graph(data.input_shape(), data.num_classes)
}

fn write_rows<T: Serialize>(path: &Path, header: &str, rows: &[T], fields: impl Fn(&T) -> String) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{}", fields(r))?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn train_mle_cmd(config: &RunConfig) -> Result<f64> {
    let out = prepare_out(config)?;
    let train = config.load_dataset(&config.data.train)?;
    let test = config.load_dataset(&config.data.test)?;
    let graph = graph_for(config, &train)?;
    info!("training {} parameters on {} examples", graph.num_params(), train.len());
    let run = train_mle(&graph, &train, &config.mle, Some(&test))?;
    CheckpointContainer::from_deterministic(&run.checkpoint)?.save(out.join("mle.ckpt"))?;
    write_rows(
        &out.join("mle_log.csv"),
        "epoch,train_loss,train_accuracy,eval_loss,test_accuracy",
        &run.log,
        |e| {
            format!(
                "{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                e.eval_loss,
                opt(e.test_accuracy)
            )
        },
    )?;
    let acc = evaluate_accuracy(&run.checkpoint.model, &test)?;
    println!("test accuracy {acc:.4}");
    Ok(acc)
}

pub fn train_vi_cmd(config: &RunConfig, init: Init, mle_checkpoint: Option<&Path>) -> Result<f64> {
    if init == Init::Moped && mle_checkpoint.is_none() {
        return Err(usage("--init moped requires --mle-checkpoint"));
    }
    let out = prepare_out(config)?;
    let train = config.load_dataset(&config.data.train)?;
    let test = config.load_dataset(&config.data.test)?;
    let graph = graph_for(config, &train)?;
    let start = match (init, mle_checkpoint) {
        (Init::Moped, Some(path)) => {
            let ckpt = CheckpointContainer::load(path)?.to_deterministic()?;
            build_moped_init_for(&graph, &ckpt, &config.moped)?
        }
        _ => random_prior_init(&graph, config.seed)?,
    };
    info!("variational init: {}", start.provenance.init);
    let run = train_vi(start.posterior, &start.priors, &train, &config.vi, Some(&test))?;
    let ckpt = VariationalCheckpoint {
        model: run.model,
        priors: start.priors,
        meta: VariationalMeta {
            epochs: config.vi.epochs,
            final_loss: run.log.last().map_or(f64::NAN, |e| e.loss),
            seed: config.vi.seed,
            init: start.provenance.init.clone(),
            source_checkpoint: start.provenance.checkpoint_hash.clone(),
        },
    };
    CheckpointContainer::from_variational(&ckpt)?.save(out.join("vi.ckpt"))?;
    write_json(&out.join("provenance.json"), &start.provenance)?;
    write_rows(
        &out.join("vi_log.csv"),
        "epoch,loss,ce,kl,kl_weight,train_accuracy,test_accuracy",
        &run.log,
        |e| {
            format!(
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.loss,
                e.ce,
                e.kl,
                e.kl_weight,
                e.train_accuracy,
                opt(e.test_accuracy)
            )
        },
    )?;
    let acc = evaluate_accuracy(&ckpt.model.mean_model(), &test)?;
    println!("posterior-mean test accuracy {acc:.4}");
    Ok(acc)
}

fn load_posterior(path: &Path) -> Result<VariationalCheckpoint> {
    Ok(CheckpointContainer::load(path)?.to_variational()?)
}

fn predict(config: &RunConfig, ckpt: &VariationalCheckpoint, data: &Dataset) -> Result<(moped_core::Tensor, PredictiveSummary)> {
    let stack = mc_predict_dataset(&ckpt.model, data, config.mc_samples, config.seed)?;
    let summary = summarize(&stack)?;
    Ok((stack, summary))
}

fn write_report(out: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = create(&out.join("metrics.csv"))?;
    write_metrics_csv(&mut w, report)?;
    w.flush()?;
    write_json(&out.join("metrics.json"), report)
}

pub fn evaluate_cmd(config: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let out = prepare_out(config)?;
    let ckpt = load_posterior(checkpoint)?;
    let test = config.load_dataset(&config.data.test)?;
    let (stack, summary) = predict(config, &ckpt, &test)?;
    let mut w = create(&out.join("predictions.csv"))?;
    write_prediction_dump(&mut w, &stack, &summary, Some(&test.labels))?;
    w.flush()?;
    let meta = ReportMetadata::new(
        format!("{}/{}", test.name, test.split),
        test.len(),
        config.mc_samples,
        config.seed,
    );
    let report = build_metrics_report(&summary, &test.labels, &config.eval.fractions, &config.eval.thresholds, meta)?;
    write_report(&out, &report)?;
    println!(
        "accuracy {:.4}  mean BALD {:.5}  mean entropy {:.5}",
        report.accuracy, report.mean_bald, report.mean_entropy
    );
    Ok(report)
}

pub fn ood_cmd(config: &RunConfig, checkpoint: &Path) -> Result<()> {
    let Some(ood_source) = &config.data.ood else {
        return Err(usage("ood needs an out-of-distribution dataset ([data.ood] in the config)"));
    };
    let out = prepare_out(config)?;
    let ckpt = load_posterior(checkpoint)?;
    let inside = config.load_dataset(&config.data.test)?;
    let outside = config.load_dataset(ood_source)?;
    if outside.input_shape() != inside.input_shape() {
        bail!(
            "out-of-distribution inputs have shape {:?}, model expects {:?}",
            outside.input_shape(),
            inside.input_shape()
        );
    }
    let (_, s_in) = predict(config, &ckpt, &inside)?;
    let (_, s_out) = predict(config, &ckpt, &outside)?;
    let report = ood_report(&s_in, &s_out, config.eval.ood_uncertainty, config.eval.bins)?;
    write_json(&out.join("ood_report.json"), &report)?;
    let mut w = create(&out.join("ood_histogram.csv"))?;
    write_histogram_csv(&mut w, &report)?;
    w.flush()?;
    println!(
        "mean {} in {:.5} out {:.5}  separability AUROC {:.4}",
        report.uncertainty_kind, report.in_mean, report.out_mean, report.separability_auroc
    );
    Ok(())
}

pub fn curves_cmd(config: &RunConfig, predictions: &Path) -> Result<MetricsReport> {
    let out = prepare_out(config)?;
    let file = File::open(predictions).with_context(|| format!("opening {}", predictions.display()))?;
    let dump = read_prediction_dump(BufReader::new(file))?;
    let labels = dump.require_labels()?;
    let summary = summarize(&dump.stack)?;
    let meta = ReportMetadata::new(
        predictions
            .file_name()
            .map_or_else(|| predictions.display().to_string(), |n| n.to_string_lossy().into_owned()),
        summary.len(),
        dump.stack.shape()[0],
        config.seed,
    );
    let report = build_metrics_report(&summary, &labels, &config.eval.fractions, &config.eval.thresholds, meta)?;
    write_report(&out, &report)?;
    println!("accuracy {:.4}", report.accuracy);
    Ok(report)
}
