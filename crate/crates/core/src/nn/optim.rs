//! First-order optimizers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Step-decay schedule: multiply the rate by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

impl StepDecay {
    pub fn multiplier(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            1.0
        } else {
            self.factor.powi((epoch / self.every) as i32)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Applies one update with the learning rate scaled by `lr_scale`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr_scale: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Invalid(format!(
                "optimizer: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
            }
        } else if self.first.len() != params.len() {
            return Err(Error::Invalid("optimizer: parameter count changed".into()));
        }
        self.steps += 1;

        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                let lr = lr * lr_scale;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = momentum * *vi + gi;
                        *w -= lr * *vi;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let lr = lr * lr_scale;
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
