//! Deterministic models: parameter storage, initialization and forward passes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::nn::graph::{InitScheme, LayerSpec, ModelGraph, ParamLayer};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicModel {
    pub graph: ModelGraph,
    /// One entry per parametrized layer, in graph order.
    pub params: Vec<LayerParams>,
}

/// Metadata recorded with the weights produced by stage-1 training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub seed: u64,
}

/// `w_MLE` plus how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicCheckpoint {
    pub model: DeterministicModel,
    pub meta: TrainingMeta,
}

/// Uniform fan-based initialization of one weight tensor.
pub(crate) fn init_weight(layer: &ParamLayer, rng: &mut rng::Rng) -> Tensor {
    let limit = match layer.init {
        InitScheme::HeUniform => (6.0 / layer.fan_in as f64).sqrt(),
        InitScheme::GlorotUniform => (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt(),
    };
    let n = layer.weight_shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_parts(layer.weight_shape.clone(), data)
}

impl DeterministicModel {
    /// Fresh weights drawn from the `"init"` stream of `seed`; zero biases.
    pub fn init(graph: ModelGraph, seed: u64) -> Result<Self> {
        graph.validate()?;
        let mut r = rng::stream(seed, "init");
        let params = graph
            .param_layers()
            .iter()
            .map(|p| LayerParams {
                weight: init_weight(p, &mut r),
                bias: Tensor::zeros(&p.bias_shape),
            })
            .collect();
        Ok(DeterministicModel { graph, params })
    }

    pub fn from_params(graph: ModelGraph, params: Vec<LayerParams>) -> Result<Self> {
        graph.validate()?;
        let layers = graph.param_layers();
        if layers.len() != params.len() {
            return Err(Error::Invalid(format!(
                "graph has {} parametrized layers, got {} parameter sets",
                layers.len(),
                params.len()
            )));
        }
        for (spec, p) in layers.iter().zip(&params) {
            check_layer_shapes(spec, p.weight.shape(), p.bias.shape())?;
            p.weight.check_finite(&format!("{}.weight", spec.name))?;
            p.bias.check_finite(&format!("{}.bias", spec.name))?;
        }
        Ok(DeterministicModel { graph, params })
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let weights: Vec<(&Tensor, &Tensor)> =
            self.params.iter().map(|p| (&p.weight, &p.bias)).collect();
        forward_plain(&self.graph, images, &weights)
    }

    pub fn predict_proba(&self, images: &Tensor) -> Result<Tensor> {
        let logits = self.logits(images)?;
        let k = logits.shape()[1];
        Ok(Tensor::from_parts(
            logits.shape().to_vec(),
            kernels::softmax_rows(logits.data(), k),
        ))
    }

    /// Records the forward pass on `tape` with every parameter as a trainable
    /// leaf. Returns the logits and the `(weight, bias)` leaves.
    pub fn forward_tape(&self, tape: &mut Tape, images: Var) -> Result<(Var, Vec<(Var, Var)>)> {
        let leaves: Vec<(Var, Var)> = self
            .params
            .iter()
            .map(|p| (tape.leaf(p.weight.clone()), tape.leaf(p.bias.clone())))
            .collect();
        let logits = walk_tape(&self.graph, tape, images, |tape, idx, layer, h| {
            let (w, b) = leaves[idx];
            linear_tape(tape, layer, h, w, b)
        })?;
        Ok((logits, leaves))
    }
}

pub(crate) fn check_layer_shapes(spec: &ParamLayer, weight: &[usize], bias: &[usize]) -> Result<()> {
    if weight != spec.weight_shape.as_slice() || bias != spec.bias_shape.as_slice() {
        return Err(Error::Layer {
            layer: spec.name.clone(),
            reason: format!(
                "expected weight {:?} / bias {:?}, found {:?} / {:?}",
                spec.weight_shape, spec.bias_shape, weight, bias
            ),
        });
    }
    Ok(())
}

/// Walks the graph on a tape. `apply` handles parametrized layers and
/// receives the index of the layer among parametrized layers.
pub(crate) fn walk_tape(
    graph: &ModelGraph,
    tape: &mut Tape,
    input: Var,
    mut apply: impl FnMut(&mut Tape, usize, &LayerSpec, Var) -> Result<Var>,
) -> Result<Var> {
    let mut h = input;
    let mut idx = 0;
    for layer in &graph.layers {
        h = match layer {
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                let out = apply(tape, idx, layer, h)?;
                idx += 1;
                out
            }
            LayerSpec::Relu => tape.relu(h),
            LayerSpec::Maxpool => tape.maxpool2x2(h)?,
            LayerSpec::Flatten => {
                let shape = tape.shape(h);
                let rest = shape[1..].iter().product();
                let b = shape[0];
                tape.reshape(h, &[b, rest])?
            }
        };
    }
    Ok(h)
}

/// `layer(h; w) + b` on the tape.
pub(crate) fn linear_tape(tape: &mut Tape, layer: &LayerSpec, h: Var, w: Var, b: Var) -> Result<Var> {
    let out = match layer {
        LayerSpec::Dense { .. } => tape.matmul(h, w)?,
        LayerSpec::Conv2d {
            stride, padding, ..
        } => tape.conv2d(h, w, *stride, *padding)?,
        _ => unreachable!("linear_tape on a parameter-free layer"),
    };
    let shape = tape.shape(out).to_vec();
    let bb = tape.broadcast(b, &shape)?;
    tape.add(out, bb)
}

/// Tape-free forward pass with explicit per-layer `(weight, bias)`.
pub(crate) fn forward_plain(
    graph: &ModelGraph,
    images: &Tensor,
    weights: &[(&Tensor, &Tensor)],
) -> Result<Tensor> {
    let expected = &graph.input_shape;
    if images.ndim() != 4 || images.shape()[1..] != expected[..] {
        return Err(Error::shape(
            "forward",
            format!("input {:?} vs model input [N, {:?}]", images.shape(), expected),
        ));
    }
    let mut h = images.clone();
    let mut idx = 0;
    for layer in &graph.layers {
        h = match layer {
            LayerSpec::Dense { outputs, .. } => {
                let (w, b) = weights[idx];
                idx += 1;
                let (m, k) = (h.shape()[0], h.shape()[1]);
                let mut out = kernels::matmul(h.data(), m, k, w.data(), *outputs);
                add_bias(&mut out, b.data());
                Tensor::from_parts(vec![m, *outputs], out)
            }
            LayerSpec::Conv2d {
                stride, padding, ..
            } => {
                let (w, b) = weights[idx];
                idx += 1;
                let geom = ConvGeometry::new(h.shape(), w.shape(), *stride, *padding)
                    .ok_or_else(|| Error::shape("conv2d", format!("{:?}", h.shape())))?;
                let (mut out, _) = geom.forward(h.data(), w.data());
                add_bias(&mut out, b.data());
                Tensor::from_parts(geom.output_shape(), out)
            }
            LayerSpec::Relu => h.map(|x| x.max(0.0)),
            LayerSpec::Maxpool => {
                let (out, _, shape) = kernels::maxpool2x2(h.data(), h.shape());
                Tensor::from_parts(shape, out)
            }
            LayerSpec::Flatten => {
                let b = h.shape()[0];
                let rest = h.len() / b.max(1);
                h.reshape(&[b, rest])?
            }
        };
    }
    Ok(h)
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}
