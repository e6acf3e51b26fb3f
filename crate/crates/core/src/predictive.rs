//! Monte Carlo predictive distribution and uncertainty measures.
//!
//! For `T` posterior draws with class probabilities `p_t`, the predictive
//! mean is `p̄ = (1/T) Σ_t p_t`; the predictive entropy is `H(p̄)`, and BALD
//! (the mutual information between label and weights) is
//! `H(p̄) − (1/T) Σ_t H(p_t)`. All entropies are in nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels;
use crate::nn::loss::argmax;
use crate::rng;
use crate::tensor::Tensor;
use crate::variational::VariationalModel;

/// Rows per forward chunk.
const CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    /// `[B, K]`.
    pub mean_probs: Tensor,
    pub predictive_entropy: Vec<f64>,
    pub bald: Vec<f64>,
    /// Largest entry of each `mean_probs` row.
    pub confidence: Vec<f64>,
    pub mc_samples_used: usize,
}

impl PredictiveSummary {
    pub fn len(&self) -> usize {
        self.confidence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidence.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.mean_probs.shape()[1]
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.mean_probs.row(i))).collect()
    }

    pub fn correct(&self, labels: &[usize]) -> Vec<bool> {
        self.predictions().iter().zip(labels).map(|(p, l)| p == l).collect()
    }

    pub fn uncertainty(&self, kind: UncertaintyKind) -> &[f64] {
        match kind {
            UncertaintyKind::Bald => &self.bald,
            UncertaintyKind::Entropy => &self.predictive_entropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Bald,
    Entropy,
}

impl std::fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UncertaintyKind::Bald => "bald",
            UncertaintyKind::Entropy => "entropy",
        })
    }
}

impl std::str::FromStr for UncertaintyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bald" => Ok(UncertaintyKind::Bald),
            "entropy" => Ok(UncertaintyKind::Entropy),
            other => Err(Error::Invalid(format!("unknown uncertainty kind `{other}`"))),
        }
    }
}

/// Entropy in nats with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Softmax outputs of `T` posterior draws, `[T, B, K]`.
///
/// Draw `t` uses the `t`-th `"mc-eval"` stream of `seed` and one weight
/// sample shared by all inputs, so results do not depend on `T` for the
/// common prefix, on the chunking, or on thread scheduling.
pub fn mc_predict(model: &VariationalModel, inputs: &Tensor, samples: usize, seed: u64) -> Result<Tensor> {
    if samples == 0 {
        return Err(Error::Invalid("at least one Monte Carlo sample is required".into()));
    }
    if inputs.ndim() != 4 || inputs.shape()[0] == 0 {
        return Err(Error::shape("mc_predict", format!("{:?}", inputs.shape())));
    }
    let b = inputs.shape()[0];
    let k = model.graph.num_classes();
    let slices: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::indexed_stream(seed, "mc-eval", t as u64);
            let weights = model.sample(&mut r);
            let mut probs = Vec::with_capacity(b * k);
            for start in (0..b).step_by(CHUNK) {
                let end = (start + CHUNK).min(b);
                let logits = model.logits_with(&weights, &inputs.slice_outer(start, end))?;
                probs.extend(kernels::softmax_rows(logits.data(), k));
            }
            Ok(probs)
        })
        .collect::<Result<_>>()?;
    Tensor::new(vec![samples, b, k], slices.concat())
}

pub fn mc_predict_dataset(model: &VariationalModel, data: &Dataset, samples: usize, seed: u64) -> Result<Tensor> {
    mc_predict(model, &data.images, samples, seed)
}

/// Reduces a `[T, B, K]` probability stack.
pub fn summarize(stack: &Tensor) -> Result<PredictiveSummary> {
    if stack.ndim() != 3 || stack.is_empty() {
        return Err(Error::shape("summarize", format!("expected [T, B, K], got {:?}", stack.shape())));
    }
    let (t, b, k) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    let data = stack.data();
    for (r, row) in data.chunks(k).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Invalid(format!(
                "draw {} row {} is not a probability vector (sum {s})",
                r / b,
                r % b
            )));
        }
    }
    let mut mean = vec![0.0; b * k];
    let mut mean_draw_entropy = vec![0.0; b];
    for ti in 0..t {
        for i in 0..b {
            let row = &data[(ti * b + i) * k..(ti * b + i + 1) * k];
            for (m, p) in mean[i * k..(i + 1) * k].iter_mut().zip(row) {
                *m += p;
            }
            mean_draw_entropy[i] += entropy(row);
        }
    }
    let inv = 1.0 / t as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut predictive_entropy = Vec::with_capacity(b);
    let mut bald = Vec::with_capacity(b);
    let mut confidence = Vec::with_capacity(b);
    for i in 0..b {
        let row = &mean[i * k..(i + 1) * k];
        let h = entropy(row);
        predictive_entropy.push(h);
        // Jensen guarantees h ≥ mean draw entropy; clamp rounding residue.
        bald.push((h - mean_draw_entropy[i] * inv).max(0.0));
        confidence.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(PredictiveSummary {
        mean_probs: Tensor::new(vec![b, k], mean)?,
        predictive_entropy,
        bald,
        confidence,
        mc_samples_used: t,
    })
}
