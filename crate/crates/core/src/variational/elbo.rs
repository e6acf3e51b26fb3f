use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::loss::cross_entropy_tape;
use crate::nn::model::walk_tape;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::variational::layers::{flipout_tape, reparam_tape, LayerVars};
use crate::variational::model::{PriorSet, VariationalModel};
use crate::variational::param::kl_tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Reparameterization,
    #[default]
    Flipout,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reparameterization" | "reparam" => Ok(Estimator::Reparameterization),
            "flipout" => Ok(Estimator::Flipout),
            other => Err(Error::Invalid(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Minibatch objective: `mean CE + kl_weight · KL(q || p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboConfig {
    /// Scale of the KL term relative to the batch-mean cross-entropy.
    /// `1 / N_train` makes the loss `-ELBO / N_train` in expectation.
    pub kl_weight: f64,
    /// Weight draws averaged per gradient step.
    pub mc_train_samples: usize,
    pub estimator: Estimator,
}

impl ElboConfig {
    pub fn new(kl_weight: f64) -> Self {
        ElboConfig {
            kl_weight,
            mc_train_samples: 1,
            estimator: Estimator::Flipout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Invalid(format!(
                "kl_weight must be finite and non-negative, got {}",
                self.kl_weight
            )));
        }
        if self.mc_train_samples == 0 {
            return Err(Error::Invalid("mc_train_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub loss: f64,
    /// Cross-entropy averaged over the batch and the weight draws.
    pub ce: f64,
    /// Unscaled `Σ_layers KL`.
    pub kl: f64,
}

/// Gradients of one layer's variational parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight_mu: Tensor,
    pub weight_rho: Tensor,
    pub bias_mu: Tensor,
    pub bias_rho: Tensor,
}

/// A recorded minibatch objective, ready for `backward`.
#[derive(Debug)]
pub struct ElboGraph {
    pub tape: Tape,
    pub loss: Var,
    pub vars: Vec<LayerVars>,
    /// Logits of each weight draw.
    pub logits: Vec<Var>,
    pub terms: ElboTerms,
}

impl ElboGraph {
    pub fn gradients(&self) -> Result<Vec<LayerGradients>> {
        let mut grads = self.tape.backward(self.loss)?;
        let mut take = |v: Var| {
            let shape = self.tape.shape(v).to_vec();
            grads.take(v).unwrap_or_else(|| Tensor::zeros(&shape))
        };
        Ok(self
            .vars
            .iter()
            .map(|v| LayerGradients {
                weight_mu: take(v.weight_mu),
                weight_rho: take(v.weight_rho),
                bias_mu: take(v.bias_mu),
                bias_rho: take(v.bias_rho),
            })
            .collect())
    }
}

/// Records the minibatch loss. Noise is drawn from `rng` in a fixed order
/// (per draw, per layer: weight eps, bias eps, then signs), so replaying the
/// same generator state replays the same `eps`.
pub fn elbo_loss(
    model: &VariationalModel,
    images: &Tensor,
    labels: &[usize],
    priors: &PriorSet,
    config: &ElboConfig,
    rng: &mut Rng,
) -> Result<ElboGraph> {
    config.validate()?;
    model.check_priors(priors)?;
    let mut tape = Tape::new();
    let vars: Vec<LayerVars> = model
        .layers
        .iter()
        .map(|l| LayerVars::register(&mut tape, l))
        .collect();
    let x = tape.constant(images.clone());

    let mut logits = Vec::with_capacity(config.mc_train_samples);
    let mut ce_total: Option<Var> = None;
    for _ in 0..config.mc_train_samples {
        let out = walk_tape(&model.graph, &mut tape, x, |tape, idx, spec, h| match config.estimator {
            Estimator::Flipout => flipout_tape(tape, spec, &vars[idx], h, rng),
            Estimator::Reparameterization => reparam_tape(tape, spec, &vars[idx], h, rng),
        })?;
        let ce = cross_entropy_tape(&mut tape, out, labels, 0.0)?;
        ce_total = Some(match ce_total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
        logits.push(out);
    }
    let ce = tape.scale(ce_total.expect("at least one draw"), 1.0 / config.mc_train_samples as f64);

    let mut kl: Option<Var> = None;
    for (name, v) in model.layer_names().iter().zip(&vars) {
        let prior = &priors[name];
        let kw = kl_tape(&mut tape, v.weight_mu, v.weight_rho, &prior.weight)?;
        let kb = kl_tape(&mut tape, v.bias_mu, v.bias_rho, &prior.bias)?;
        let layer_kl = tape.add(kw, kb)?;
        kl = Some(match kl {
            Some(acc) => tape.add(acc, layer_kl)?,
            None => layer_kl,
        });
    }
    let kl = kl.ok_or_else(|| Error::Invalid("model has no variational layers".into()))?;
    let scaled_kl = tape.scale(kl, config.kl_weight);
    let loss = tape.add(ce, scaled_kl)?;

    let terms = ElboTerms {
        loss: tape.value(loss).item(),
        ce: tape.value(ce).item(),
        kl: tape.value(kl).item(),
    };
    Ok(ElboGraph {
        tape,
        loss,
        vars,
        logits,
        terms,
    })
}
