use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::Invalid(format!(
            "cross-entropy needs at least 2 classes, got {classes}"
        )));
    }
    if labels.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {rows} rows", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Target distributions: one-hot, optionally smoothed toward uniform.
fn targets(labels: &[usize], classes: usize, smoothing: f64) -> Tensor {
    let off = smoothing / classes as f64;
    let mut data = vec![off; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] += 1.0 - smoothing;
    }
    Tensor::from_parts(vec![labels.len(), classes], data)
}

/// Mean over the batch of `-log softmax(logits)[label]`, recorded on `tape`.
pub fn cross_entropy_tape(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    label_smoothing: f64,
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("cross_entropy", format!("{shape:?}")));
    }
    check_labels(labels, shape[0], shape[1])?;
    let lsm = tape.log_softmax(logits)?;
    let t = tape.constant(targets(labels, shape[1], label_smoothing));
    let picked = tape.mul(lsm, t)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / shape[0] as f64))
}

/// Mean cross-entropy of `logits` `[B, K]` against integer labels.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.ndim() != 2 {
        return Err(Error::shape("cross_entropy", format!("{:?}", logits.shape())));
    }
    let (rows, k) = (logits.shape()[0], logits.shape()[1]);
    check_labels(labels, rows, k)?;
    let lsm = kernels::log_softmax_rows(logits.data(), k);
    let total: f64 = labels.iter().enumerate().map(|(i, &l)| -lsm[i * k + l]).sum();
    Ok(total / rows as f64)
}

/// Fraction of rows whose arg-max matches the label.
pub fn accuracy(scores: &Tensor, labels: &[usize]) -> f64 {
    let k = scores.shape()[1];
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(&scores.data()[i * k..(i + 1) * k]) == l)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
