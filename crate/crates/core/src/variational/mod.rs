//! Mean-field Gaussian variational layers and the ELBO objective.
//!
//! Every weight and bias `w` gets an independent posterior
//! `q(w) = N(μ, σ²)` with `σ = softplus(ρ)` a standard deviation. Training
//! minimizes `E_q[CE] + kl_weight · KL(q || p)` per minibatch, with the
//! expectation estimated by Flipout or the plain reparameterization trick.

pub mod elbo;
pub mod layers;
pub mod model;
pub mod param;
pub mod train;

pub use elbo::{elbo_loss, ElboConfig, ElboGraph, ElboTerms, Estimator, LayerGradients};
pub use layers::{flipout_tape, forward_flipout, forward_reparam, reparam_tape, LayerVars};
pub use model::{
    LayerPrior, PriorSet, VariationalCheckpoint, VariationalLayer, VariationalMeta, VariationalModel,
};
pub use param::{kl_factorized_gaussians, kl_tape, sample_weights_reparam, GaussianParam, PriorSpec};
pub use train::{train_vi, ViConfig, ViEpoch, ViRun};
