//! Stage 2: minibatch ELBO maximization.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::loss::accuracy;
use crate::nn::optim::{Optimizer, OptimizerConfig};
use crate::nn::train::{check_dataset, evaluate_accuracy};
use crate::rng;
use crate::tensor::Tensor;
use crate::variational::elbo::{elbo_loss, ElboConfig, Estimator};
use crate::variational::model::{PriorSet, VariationalModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// KL scale; `None` means `1 / N_train`.
    pub kl_weight: Option<f64>,
    pub mc_train_samples: usize,
    pub estimator: Estimator,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            optimizer: OptimizerConfig::adam(1e-3),
            epochs: 10,
            batch_size: 64,
            seed: 0,
            kl_weight: None,
            mc_train_samples: 1,
            estimator: Estimator::Flipout,
        }
    }
}

impl ViConfig {
    pub fn elbo(&self, train_size: usize) -> ElboConfig {
        ElboConfig {
            kl_weight: self.kl_weight.unwrap_or(1.0 / train_size.max(1) as f64),
            mc_train_samples: self.mc_train_samples,
            estimator: self.estimator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViEpoch {
    pub epoch: usize,
    /// Example-weighted means over the epoch's minibatches.
    pub loss: f64,
    pub ce: f64,
    /// Unscaled KL after the epoch's last update.
    pub kl: f64,
    pub kl_weight: f64,
    /// Accuracy of the first weight draw on each training minibatch.
    pub train_accuracy: f64,
    /// Accuracy of the posterior-mean network on the test set.
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ViRun {
    pub model: VariationalModel,
    pub log: Vec<ViEpoch>,
}

/// Trains the posterior `model` against fixed `priors`. Weight noise comes
/// from the `"vi-noise"` stream of `config.seed`, batch order from
/// `"data-order"`.
pub fn train_vi(
    mut model: VariationalModel,
    priors: &PriorSet,
    train: &Dataset,
    config: &ViConfig,
    test: Option<&Dataset>,
) -> Result<ViRun> {
    check_dataset(&model.graph, train)?;
    model.check_priors(priors)?;
    let elbo = config.elbo(train.len());
    elbo.validate()?;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut noise = rng::stream(config.seed, "vi-noise");
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let (mut loss_sum, mut ce_sum, mut correct) = (0.0, 0.0, 0.0);
        let mut kl = 0.0;
        for indices in train.epoch_batches(config.batch_size, config.seed, epoch) {
            let batch = train.batch(&indices);
            let graph = elbo_loss(&model, &batch.images, &batch.labels, priors, &elbo, &mut noise)?;
            if !graph.terms.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: graph.terms.loss,
                });
            }
            let n = indices.len() as f64;
            loss_sum += graph.terms.loss * n;
            ce_sum += graph.terms.ce * n;
            kl = graph.terms.kl;
            correct += accuracy(graph.tape.value(graph.logits[0]), &batch.labels) * n;

            let grads = graph.gradients()?;
            drop(graph);
            let grad_refs: Vec<&Tensor> = grads
                .iter()
                .flat_map(|g| [&g.weight_mu, &g.weight_rho, &g.bias_mu, &g.bias_rho])
                .collect();
            let mut params: Vec<&mut Tensor> = model
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.weight.mu, &mut l.weight.rho, &mut l.bias.mu, &mut l.bias.rho])
                .collect();
            optimizer.step(&mut params, &grad_refs, 1.0)?;
        }
        let n = train.len() as f64;
        let test_accuracy = test
            .map(|t| evaluate_accuracy(&model.mean_model(), t))
            .transpose()?;
        let entry = ViEpoch {
            epoch: epoch + 1,
            loss: loss_sum / n,
            ce: ce_sum / n,
            kl,
            kl_weight: elbo.kl_weight,
            train_accuracy: correct / n,
            test_accuracy,
        };
        info!(
            "vi epoch {}: loss {:.4} ce {:.4} kl {:.1} acc {:.4} test {:?}",
            entry.epoch, entry.loss, entry.ce, entry.kl, entry.train_accuracy, entry.test_accuracy
        );
        log.push(entry);
    }
    Ok(ViRun { model, log })
}
