//! Stochastic forward passes through one variational layer.
//!
//! Both estimators draw a fresh `eps` per call, so one call per minibatch
//! gives one shared weight perturbation `ΔW = σ ∘ eps` per minibatch.
//! With the naive reparameterization every example sees `μ + ΔW`. Flipout
//! instead gives example `n` the perturbation `ΔW ∘ (s_n r_nᵀ)` for random
//! sign vectors `r_n` (inputs) and `s_n` (outputs):
//!
//! ```text
//! y_n = layer(x_n; μ) + μ_b + s_n ∘ (layer(x_n ∘ r_n; ΔW) + Δb)
//! ```
//!
//! For convolutions the signs are per channel and shared across spatial
//! positions. Sign flips leave `N(0, σ²)` unchanged, so each example's
//! effective weights are still marginally `N(μ, σ²)`.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::model::linear_tape;
use crate::nn::LayerSpec;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::variational::model::VariationalLayer;

/// Tape leaves of one layer's variational parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerVars {
    pub weight_mu: Var,
    pub weight_rho: Var,
    pub bias_mu: Var,
    pub bias_rho: Var,
}

impl LayerVars {
    pub fn register(tape: &mut Tape, layer: &VariationalLayer) -> Self {
        LayerVars {
            weight_mu: tape.leaf(layer.weight.mu.clone()),
            weight_rho: tape.leaf(layer.weight.rho.clone()),
            bias_mu: tape.leaf(layer.bias.mu.clone()),
            bias_rho: tape.leaf(layer.bias.rho.clone()),
        }
    }
}

fn channels(spec: &LayerSpec) -> (usize, usize) {
    match *spec {
        LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            ..
        } => (in_channels, out_channels),
        _ => unreachable!("variational forward on a parameter-free layer"),
    }
}

/// `(σ_w ∘ eps_w, σ_b ∘ eps_b)` with fresh noise.
fn perturbation(tape: &mut Tape, vars: &LayerVars, rng: &mut Rng) -> Result<(Var, Var)> {
    let mut scaled = |tape: &mut Tape, rho: Var| {
        let shape = tape.shape(rho).to_vec();
        let n = shape.iter().product();
        let eps = tape.constant(Tensor::from_parts(shape, rng::standard_normals(rng, n)));
        let sigma = tape.softplus(rho);
        tape.mul(sigma, eps)
    };
    let dw = scaled(tape, vars.weight_rho)?;
    let db = scaled(tape, vars.bias_rho)?;
    Ok((dw, db))
}

/// Per-(example, channel) signs tiled over the inner positions of `shape`
/// (`[B, C]` or `[B, H, W, C]`).
fn tile_signs(signs: &[f64], shape: &[usize]) -> Tensor {
    let c = shape[shape.len() - 1];
    let b = shape[0];
    let inner: usize = shape[1..shape.len() - 1].iter().product();
    let mut data = Vec::with_capacity(b * inner * c);
    for n in 0..b {
        let row = &signs[n * c..(n + 1) * c];
        for _ in 0..inner {
            data.extend_from_slice(row);
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}

fn apply_kernel(tape: &mut Tape, spec: &LayerSpec, h: Var, w: Var) -> Result<Var> {
    match spec {
        LayerSpec::Conv2d {
            stride, padding, ..
        } => tape.conv2d(h, w, *stride, *padding),
        _ => tape.matmul(h, w),
    }
}

/// Flipout forward on the tape.
pub fn flipout_tape(
    tape: &mut Tape,
    spec: &LayerSpec,
    vars: &LayerVars,
    input: Var,
    rng: &mut Rng,
) -> Result<Var> {
    let (dw, db) = perturbation(tape, vars, rng)?;
    let in_shape = tape.shape(input).to_vec();
    let batch = in_shape[0];
    let (cin, cout) = channels(spec);
    let r = rng::rademacher(rng, batch * cin);
    let s = rng::rademacher(rng, batch * cout);

    let mean = linear_tape(tape, spec, input, vars.weight_mu, vars.bias_mu)?;
    let r = tape.constant(tile_signs(&r, &in_shape));
    let xr = tape.mul(input, r)?;
    let p = apply_kernel(tape, spec, xr, dw)?;
    let out_shape = tape.shape(p).to_vec();
    let dbb = tape.broadcast(db, &out_shape)?;
    let p = tape.add(p, dbb)?;
    let s = tape.constant(tile_signs(&s, &out_shape));
    let pert = tape.mul(p, s)?;
    tape.add(mean, pert)
}

/// Naive reparameterization on the tape: every example sees `μ + ΔW`.
pub fn reparam_tape(
    tape: &mut Tape,
    spec: &LayerSpec,
    vars: &LayerVars,
    input: Var,
    rng: &mut Rng,
) -> Result<Var> {
    let (dw, db) = perturbation(tape, vars, rng)?;
    let w = tape.add(vars.weight_mu, dw)?;
    let b = tape.add(vars.bias_mu, db)?;
    linear_tape(tape, spec, input, w, b)
}

/// Flipout output of one layer, off the tape.
pub fn forward_flipout(
    spec: &LayerSpec,
    layer: &VariationalLayer,
    inputs: &Tensor,
    rng: &mut Rng,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = LayerVars::register(&mut tape, layer);
    let x = tape.constant(inputs.clone());
    let y = flipout_tape(&mut tape, spec, &vars, x, rng)?;
    Ok(tape.value(y).clone())
}

/// Reparameterized output of one layer, off the tape.
pub fn forward_reparam(
    spec: &LayerSpec,
    layer: &VariationalLayer,
    inputs: &Tensor,
    rng: &mut Rng,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = LayerVars::register(&mut tape, layer);
    let x = tape.constant(inputs.clone());
    let y = reparam_tape(&mut tape, spec, &vars, x, rng)?;
    Ok(tape.value(y).clone())
}
