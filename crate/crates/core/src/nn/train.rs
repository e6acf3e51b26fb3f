//! Stage 1: maximum-likelihood training of a deterministic model.

use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::graph::ModelGraph;
use crate::nn::loss::{accuracy, cross_entropy_loss, cross_entropy_tape};
use crate::nn::model::{DeterministicCheckpoint, DeterministicModel, TrainingMeta};
use crate::nn::optim::{Optimizer, OptimizerConfig, StepDecay};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 coefficient added to the gradient; 0 disables it.
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub lr_decay: Option<StepDecay>,
    /// Size of the fixed batch (head of the training set) on which the loss
    /// is re-measured after every epoch.
    pub eval_batch: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            optimizer: OptimizerConfig::adam(1e-3),
            epochs: 10,
            batch_size: 64,
            seed: 0,
            weight_decay: 0.0,
            label_smoothing: 0.0,
            lr_decay: None,
            eval_batch: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleEpoch {
    pub epoch: usize,
    /// Example-weighted mean of the minibatch losses.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Loss on the fixed evaluation batch after the epoch's updates.
    pub eval_loss: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MleRun {
    pub checkpoint: DeterministicCheckpoint,
    pub log: Vec<MleEpoch>,
}

/// Accuracy of a deterministic model on a dataset, evaluated in chunks.
pub fn evaluate_accuracy(model: &DeterministicModel, data: &Dataset) -> Result<f64> {
    let mut correct = 0.0;
    for batch in data.chunks(1000) {
        let logits = model.logits(&batch.images)?;
        correct += accuracy(&logits, &batch.labels) * batch.len() as f64;
    }
    Ok(correct / data.len() as f64)
}

pub fn mean_cross_entropy(model: &DeterministicModel, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for batch in data.chunks(1000) {
        let logits = model.logits(&batch.images)?;
        total += cross_entropy_loss(&logits, &batch.labels)? * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}

pub(crate) fn check_dataset(graph: &ModelGraph, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if data.input_shape() != graph.input_shape {
        return Err(Error::shape(
            "train",
            format!(
                "dataset inputs {:?} vs model inputs {:?}",
                data.input_shape(),
                graph.input_shape
            ),
        ));
    }
    let k = graph.num_classes();
    if let Some(&label) = data.labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok(())
}

/// Trains `graph` by minibatch gradient descent on mean cross-entropy.
/// Bit-reproducible given `(config, train)`.
pub fn train_mle(
    graph: &ModelGraph,
    train: &Dataset,
    config: &MleConfig,
    test: Option<&Dataset>,
) -> Result<MleRun> {
    check_dataset(graph, train)?;
    let model = DeterministicModel::init(graph.clone(), config.seed)?;
    train_mle_from(model, train, config, test)
}

/// Continues training from an existing model.
pub fn train_mle_from(
    mut model: DeterministicModel,
    train: &Dataset,
    config: &MleConfig,
    test: Option<&Dataset>,
) -> Result<MleRun> {
    check_dataset(&model.graph, train)?;
    let eval_set = train.head(config.eval_batch.max(1));
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut log = Vec::with_capacity(config.epochs);
    let mut final_loss = mean_cross_entropy(&model, &eval_set)?;

    for epoch in 0..config.epochs {
        let lr_scale = config.lr_decay.map_or(1.0, |d| d.multiplier(epoch));
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for indices in train.epoch_batches(config.batch_size, config.seed, epoch) {
            let batch = train.batch(&indices);
            let mut tape = Tape::new();
            let x = tape.constant(batch.images);
            let (logits, leaves) = model.forward_tape(&mut tape, x)?;
            let loss = cross_entropy_tape(&mut tape, logits, &batch.labels, config.label_smoothing)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: loss_value,
                });
            }
            loss_sum += loss_value * indices.len() as f64;
            correct += accuracy(tape.value(logits), &batch.labels) * indices.len() as f64;

            let mut grads = tape.backward(loss)?;
            let mut grad_list: Vec<Tensor> = Vec::with_capacity(2 * leaves.len());
            for (lp, &(w, b)) in model.params.iter().zip(&leaves) {
                let mut gw = grads.take(w).unwrap_or_else(|| Tensor::zeros(lp.weight.shape()));
                let mut gb = grads.take(b).unwrap_or_else(|| Tensor::zeros(lp.bias.shape()));
                if config.weight_decay > 0.0 {
                    gw.add_assign(&lp.weight.map(|v| config.weight_decay * v));
                    gb.add_assign(&lp.bias.map(|v| config.weight_decay * v));
                }
                grad_list.push(gw);
                grad_list.push(gb);
            }
            let mut params: Vec<&mut Tensor> = model
                .params
                .iter_mut()
                .flat_map(|p| [&mut p.weight, &mut p.bias])
                .collect();
            let grad_refs: Vec<&Tensor> = grad_list.iter().collect();
            optimizer.step(&mut params, &grad_refs, lr_scale)?;
        }
        let n = train.len() as f64;
        let eval_loss = mean_cross_entropy(&model, &eval_set)?;
        if !eval_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                loss: eval_loss,
            });
        }
        final_loss = eval_loss;
        let test_accuracy = test.map(|t| evaluate_accuracy(&model, t)).transpose()?;
        let entry = MleEpoch {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct / n,
            eval_loss,
            test_accuracy,
        };
        info!(
            "mle epoch {}: loss {:.4} acc {:.4} eval {:.4} test {:?}",
            entry.epoch, entry.train_loss, entry.train_accuracy, entry.eval_loss, entry.test_accuracy
        );
        log.push(entry);
    }

    Ok(MleRun {
        checkpoint: DeterministicCheckpoint {
            model,
            meta: TrainingMeta {
                epochs: config.epochs,
                final_loss,
                seed: config.seed,
            },
        },
        log,
    })
}
