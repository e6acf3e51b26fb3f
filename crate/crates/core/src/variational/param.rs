use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{softplus, softplus_inverse, Tensor};

/// Factorized Gaussian `N(mu, softplus(rho)²)` over one weight tensor.
/// `softplus(rho)` is a standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParam {
    pub mu: Tensor,
    pub rho: Tensor,
}

impl GaussianParam {
    pub fn new(mu: Tensor, rho: Tensor) -> Result<Self> {
        if mu.shape() != rho.shape() {
            return Err(Error::shape(
                "gaussian_param",
                format!("mu {:?} vs rho {:?}", mu.shape(), rho.shape()),
            ));
        }
        Ok(GaussianParam { mu, rho })
    }

    /// Every element with the same `rho`.
    pub fn with_constant_rho(mu: Tensor, rho: f64) -> Self {
        let rho = Tensor::full(mu.shape(), rho);
        GaussianParam { mu, rho }
    }

    pub fn from_sigma(mu: Tensor, sigma: &Tensor) -> Result<Self> {
        if sigma.data().iter().any(|&s| s <= 0.0) {
            return Err(Error::Invalid("sigma must be positive".into()));
        }
        Self::new(mu, sigma.map(softplus_inverse))
    }

    pub fn sigma(&self) -> Tensor {
        self.rho.map(softplus)
    }

    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// One draw `mu + sigma ∘ eps`, `eps ~ N(0, I)`.
pub fn sample_weights_reparam(param: &GaussianParam, rng: &mut Rng) -> Tensor {
    let eps = rng::standard_normals(rng, param.len());
    let data = param
        .mu
        .data()
        .iter()
        .zip(param.rho.data())
        .zip(&eps)
        .map(|((&m, &r), &e)| m + softplus(r) * e)
        .collect();
    Tensor::from_parts(param.shape().to_vec(), data)
}

/// Gaussian prior with per-element mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl PriorSpec {
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::shape(
                "prior",
                format!("mu {:?} vs sigma {:?}", mu.shape(), sigma.shape()),
            ));
        }
        check_prior_sigma(&sigma)?;
        Ok(PriorSpec { mu, sigma })
    }

    /// `N(0, 1)` elementwise.
    pub fn standard(shape: &[usize]) -> Self {
        PriorSpec {
            mu: Tensor::zeros(shape),
            sigma: Tensor::full(shape, 1.0),
        }
    }
}

fn check_prior_sigma(sigma: &Tensor) -> Result<()> {
    if let Some(s) = sigma.data().iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Invalid(format!("prior sigma must be positive, found {s}")));
    }
    Ok(())
}

fn check_kl_shapes(param: &GaussianParam, prior: &PriorSpec) -> Result<()> {
    if param.shape() != prior.mu.shape() || prior.mu.shape() != prior.sigma.shape() {
        return Err(Error::shape(
            "kl",
            format!("posterior {:?} vs prior {:?}", param.shape(), prior.mu.shape()),
        ));
    }
    check_prior_sigma(&prior.sigma)
}

/// `KL(q || p)` summed over elements of two factorized Gaussians.
pub fn kl_factorized_gaussians(param: &GaussianParam, prior: &PriorSpec) -> Result<f64> {
    check_kl_shapes(param, prior)?;
    let mut kl = 0.0;
    for i in 0..param.len() {
        let sq = softplus(param.rho.data()[i]);
        let sp = prior.sigma.data()[i];
        let d = param.mu.data()[i] - prior.mu.data()[i];
        kl += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl)
}

/// The same KL recorded on a tape as a function of the `mu` and `rho` leaves.
pub fn kl_tape(tape: &mut Tape, mu: Var, rho: Var, prior: &PriorSpec) -> Result<Var> {
    if tape.shape(mu) != prior.mu.shape() || tape.shape(rho) != prior.mu.shape() {
        return Err(Error::shape(
            "kl",
            format!("posterior {:?} vs prior {:?}", tape.shape(mu), prior.mu.shape()),
        ));
    }
    check_prior_sigma(&prior.sigma)?;
    let n = prior.mu.len() as f64;
    let sigma_q = tape.softplus(rho);
    let log_sq = tape.log(sigma_q)?;
    let var_q = tape.square(sigma_q);
    let neg_mu_p = tape.constant(prior.mu.map(|m| -m));
    let diff = tape.add(mu, neg_mu_p)?;
    let diff2 = tape.square(diff);
    let num = tape.add(var_q, diff2)?;
    let inv = tape.constant(prior.sigma.map(|s| 1.0 / (2.0 * s * s)));
    let quad = tape.mul(num, inv)?;
    let quad_sum = tape.sum(quad);
    let log_sum = tape.sum(log_sq);
    let partial = tape.sub(quad_sum, log_sum)?;
    let constant: f64 = prior.sigma.data().iter().map(|s| s.ln()).sum::<f64>() - 0.5 * n;
    let c = tape.constant(Tensor::scalar(constant));
    tape.add(partial, c)
}
