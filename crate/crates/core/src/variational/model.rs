use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{check_layer_shapes, forward_plain};
use crate::nn::{DeterministicModel, LayerParams, ModelGraph};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::variational::param::{sample_weights_reparam, GaussianParam, PriorSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalLayer {
    pub weight: GaussianParam,
    pub bias: GaussianParam,
}

/// Priors of one parametrized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPrior {
    pub weight: PriorSpec,
    pub bias: PriorSpec,
}

/// Priors keyed by layer name (`conv0`, `dense7`, ...).
pub type PriorSet = BTreeMap<String, LayerPrior>;

/// Mean-field Gaussian posterior over every weight and bias of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalModel {
    pub graph: ModelGraph,
    /// One entry per parametrized layer, in graph order.
    pub layers: Vec<VariationalLayer>,
}

impl VariationalModel {
    pub fn new(graph: ModelGraph, layers: Vec<VariationalLayer>) -> Result<Self> {
        graph.validate()?;
        let specs = graph.param_layers();
        if specs.len() != layers.len() {
            return Err(Error::Invalid(format!(
                "graph has {} parametrized layers, got {} variational layers",
                specs.len(),
                layers.len()
            )));
        }
        for (spec, l) in specs.iter().zip(&layers) {
            check_layer_shapes(spec, l.weight.shape(), l.bias.shape())?;
            for (what, t) in [
                ("weight.mu", &l.weight.mu),
                ("weight.rho", &l.weight.rho),
                ("bias.mu", &l.bias.mu),
                ("bias.rho", &l.bias.rho),
            ] {
                t.check_finite(&format!("{}.{what}", spec.name))?;
            }
        }
        Ok(VariationalModel { graph, layers })
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.graph.param_layers().into_iter().map(|p| p.name).collect()
    }

    /// Posterior means as a deterministic network.
    pub fn mean_model(&self) -> DeterministicModel {
        DeterministicModel {
            graph: self.graph.clone(),
            params: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.mu.clone(),
                    bias: l.bias.mu.clone(),
                })
                .collect(),
        }
    }

    /// One joint draw of every weight and bias.
    pub fn sample(&self, rng: &mut Rng) -> Vec<LayerParams> {
        self.layers
            .iter()
            .map(|l| LayerParams {
                weight: sample_weights_reparam(&l.weight, rng),
                bias: sample_weights_reparam(&l.bias, rng),
            })
            .collect()
    }

    pub fn logits_with(&self, weights: &[LayerParams], images: &Tensor) -> Result<Tensor> {
        let refs: Vec<(&Tensor, &Tensor)> = weights.iter().map(|p| (&p.weight, &p.bias)).collect();
        forward_plain(&self.graph, images, &refs)
    }

    /// Every prior present with the posterior's shapes.
    pub fn check_priors(&self, priors: &PriorSet) -> Result<()> {
        for (spec, layer) in self.graph.param_layers().iter().zip(&self.layers) {
            let prior = priors.get(&spec.name).ok_or_else(|| Error::Layer {
                layer: spec.name.clone(),
                reason: "no prior for this layer".into(),
            })?;
            if prior.weight.mu.shape() != layer.weight.shape() || prior.bias.mu.shape() != layer.bias.shape() {
                return Err(Error::Layer {
                    layer: spec.name.clone(),
                    reason: format!(
                        "prior shapes {:?} / {:?} do not match posterior {:?} / {:?}",
                        prior.weight.mu.shape(),
                        prior.bias.mu.shape(),
                        layer.weight.shape(),
                        layer.bias.shape()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Metadata stored with a trained posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VariationalMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub seed: u64,
    /// How the posterior was initialized (`moped-scaled`, `random`, ...).
    pub init: String,
    /// Hash of the stage-1 checkpoint, when there was one.
    pub source_checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalCheckpoint {
    pub model: VariationalModel,
    pub priors: PriorSet,
    pub meta: VariationalMeta,
}
