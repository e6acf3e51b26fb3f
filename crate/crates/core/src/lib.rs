//! Bayesian neural networks whose weight priors come from a pretrained
//! deterministic network.
//!
//! The pipeline has two stages. A deterministic network is first trained to
//! its maximum-likelihood weights `w_MLE` ([`nn::train_mle`]). Those weights
//! then centre the Gaussian priors of a mean-field variational network and
//! initialize its approximate posterior ([`moped::build_moped_init`]), which
//! is trained by maximizing the evidence lower bound ([`variational::train_vi`]).
//! Predictions average Monte Carlo forward passes ([`predictive`]), and the
//! [`eval`] module scores the resulting uncertainty estimates.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod moped;
pub mod nn;
pub mod predictive;
pub mod rng;
pub mod tensor;
pub mod variational;

pub use error::{Error, Result};
pub use tensor::Tensor;
