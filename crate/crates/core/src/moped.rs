//! Empirical-Bayes priors and posterior initialization from MLE weights.
//!
//! Given a trained deterministic network with weights `w_MLE`, every weight
//! (and bias) receives the prior `N(w_MLE, 1)` and a posterior whose mean
//! starts at `w_MLE`. The posterior scale is initialized either
//!
//! * `perturb`: `ρ ~ N(ρ̄, Δρ²)` elementwise, or
//! * `scaled`: `σ = softplus(ρ) = δ·|w_MLE|`, floored at `sigma_floor` so that
//!   zero weights keep a finite, trainable `ρ`.
//!
//! [`random_prior_init`] builds the usual baseline instead: `N(0, 1)` priors
//! and a freshly initialized posterior.

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::model::check_layer_shapes;
use crate::nn::{DeterministicCheckpoint, DeterministicModel, ModelGraph};
use crate::rng;
use crate::tensor::{softplus, softplus_inverse, Tensor};
use crate::variational::{GaussianParam, LayerPrior, PriorSet, PriorSpec, VariationalLayer, VariationalModel};

/// Posterior `ρ` of the random-prior baseline; `softplus(-3) ≈ 0.0486`.
pub const RANDOM_INIT_RHO: f64 = -3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Perturb,
    #[default]
    Scaled,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturb" => Ok(Variant::Perturb),
            "scaled" => Ok(Variant::Scaled),
            other => Err(Error::Invalid(format!("unknown MOPED variant `{other}`"))),
        }
    }
}

/// Standard deviation of the priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorSigmaMode {
    /// `σ_p = 1` everywhere.
    #[default]
    Unit,
    /// `σ_p` equals the posterior's initial `σ`.
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MopedConfig {
    pub variant: Variant,
    /// Mean of the `ρ` perturbation (`perturb`).
    pub rho_bar: f64,
    /// Standard deviation of the `ρ` perturbation (`perturb`).
    pub delta_rho: f64,
    /// Scale factor `δ ∈ (0, 1]` (`scaled`).
    pub delta: f64,
    pub sigma_floor: f64,
    pub prior_sigma_mode: PriorSigmaMode,
    pub seed: u64,
}

impl Default for MopedConfig {
    fn default() -> Self {
        MopedConfig {
            variant: Variant::Scaled,
            rho_bar: -3.0,
            delta_rho: 0.1,
            delta: 0.1,
            sigma_floor: 1e-4,
            prior_sigma_mode: PriorSigmaMode::Unit,
            seed: 0,
        }
    }
}

impl MopedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return Err(Error::Invalid(format!("sigma_floor must be positive, got {}", self.sigma_floor)));
        }
        match self.variant {
            Variant::Scaled if !(self.delta > 0.0 && self.delta <= 1.0) => Err(Error::Invalid(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            ))),
            Variant::Perturb if !(self.delta_rho >= 0.0 && self.delta_rho.is_finite() && self.rho_bar.is_finite()) => {
                Err(Error::Invalid(format!(
                    "perturb needs finite rho_bar and delta_rho >= 0, got {} / {}",
                    self.rho_bar, self.delta_rho
                )))
            }
            _ => Ok(()),
        }
    }

    /// Short label for logs and metadata, e.g. `moped-scaled`.
    pub fn label(&self) -> String {
        match self.variant {
            Variant::Perturb => "moped-perturb".into(),
            Variant::Scaled => "moped-scaled".into(),
        }
    }
}

/// Where an initialization came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `moped-scaled`, `moped-perturb` or `random`.
    pub init: String,
    /// SHA-256 of the source checkpoint (MOPED only).
    pub checkpoint_hash: Option<String>,
    pub config: Option<MopedConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MopedInitialization {
    pub priors: PriorSet,
    pub posterior: VariationalModel,
    pub provenance: Provenance,
}

/// SHA-256 over the graph description and the little-endian weight bytes.
pub fn checkpoint_hash(model: &DeterministicModel) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&model.graph).expect("graph serializes"));
    for p in &model.params {
        for t in [&p.weight, &p.bias] {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Initial posterior `σ` of the `scaled` variant: `max(δ·|w|, floor)`.
pub fn scaled_sigma(w: f64, delta: f64, floor: f64) -> f64 {
    (delta * w.abs()).max(floor)
}

/// MOPED initialization for the checkpoint's own graph.
pub fn build_moped_init(ckpt: &DeterministicCheckpoint, config: &MopedConfig) -> Result<MopedInitialization> {
    build_moped_init_for(&ckpt.model.graph, ckpt, config)
}

/// MOPED initialization for `graph`, which must have the checkpoint's
/// parameter shapes layer by layer.
pub fn build_moped_init_for(
    graph: &ModelGraph,
    ckpt: &DeterministicCheckpoint,
    config: &MopedConfig,
) -> Result<MopedInitialization> {
    config.validate()?;
    graph.validate()?;
    let specs = graph.param_layers();
    if specs.len() != ckpt.model.params.len() {
        return Err(Error::Invalid(format!(
            "checkpoint has {} parametrized layers, target graph {}",
            ckpt.model.params.len(),
            specs.len()
        )));
    }
    let mut noise = rng::stream(config.seed, "moped");
    let mut floored = 0usize;
    let mut init_rho = |w: &Tensor| -> Tensor {
        match config.variant {
            Variant::Perturb => {
                let eps = rng::standard_normals(&mut noise, w.len());
                Tensor::from_parts(
                    w.shape().to_vec(),
                    eps.iter().map(|e| config.rho_bar + config.delta_rho * e).collect(),
                )
            }
            Variant::Scaled => {
                floored += w.data().iter().filter(|v| config.delta * v.abs() < config.sigma_floor).count();
                w.map(|v| softplus_inverse(scaled_sigma(v, config.delta, config.sigma_floor)))
            }
        }
    };

    let mut layers = Vec::with_capacity(specs.len());
    let mut priors = PriorSet::new();
    for (spec, p) in specs.iter().zip(&ckpt.model.params) {
        check_layer_shapes(spec, p.weight.shape(), p.bias.shape())?;
        let weight = GaussianParam::new(p.weight.clone(), init_rho(&p.weight))?;
        let bias = GaussianParam::new(p.bias.clone(), init_rho(&p.bias))?;
        let prior = |param: &GaussianParam| PriorSpec {
            mu: param.mu.clone(),
            sigma: match config.prior_sigma_mode {
                PriorSigmaMode::Unit => Tensor::full(param.shape(), 1.0),
                PriorSigmaMode::Scaled => param.rho.map(softplus),
            },
        };
        priors.insert(
            spec.name.clone(),
            LayerPrior {
                weight: prior(&weight),
                bias: prior(&bias),
            },
        );
        layers.push(VariationalLayer { weight, bias });
    }
    if floored > 0 {
        warn!(
            "{floored} parameters had delta*|w| below sigma_floor={}; their sigma was set to the floor",
            config.sigma_floor
        );
    }
    Ok(MopedInitialization {
        priors,
        posterior: VariationalModel::new(graph.clone(), layers)?,
        provenance: Provenance {
            init: config.label(),
            checkpoint_hash: Some(checkpoint_hash(&ckpt.model)),
            config: Some(*config),
            seed: config.seed,
        },
    })
}

/// Baseline: `N(0, 1)` priors, posterior means from the standard weight
/// initialization (`"init"` stream of `seed`), `ρ = RANDOM_INIT_RHO`.
pub fn random_prior_init(graph: &ModelGraph, seed: u64) -> Result<MopedInitialization> {
    let model = DeterministicModel::init(graph.clone(), seed)?;
    let mut priors = PriorSet::new();
    let mut layers = Vec::with_capacity(model.params.len());
    for (spec, p) in graph.param_layers().iter().zip(model.params) {
        priors.insert(
            spec.name.clone(),
            LayerPrior {
                weight: PriorSpec::standard(p.weight.shape()),
                bias: PriorSpec::standard(p.bias.shape()),
            },
        );
        layers.push(VariationalLayer {
            weight: GaussianParam::with_constant_rho(p.weight, RANDOM_INIT_RHO),
            bias: GaussianParam::with_constant_rho(p.bias, RANDOM_INIT_RHO),
        });
    }
    Ok(MopedInitialization {
        priors,
        posterior: VariationalModel::new(graph.clone(), layers)?,
        provenance: Provenance {
            init: "random".into(),
            checkpoint_hash: None,
            config: None,
            seed,
        },
    })
}
