//! Layer specifications and the model graphs built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{conv_extent, Padding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Maxpool,
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: Padding) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv",
            LayerSpec::Maxpool => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    HeUniform,
    GlorotUniform,
}

/// Shapes and initialization of one parametrized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayer {
    /// Position in [`ModelGraph::layers`].
    pub layer_index: usize,
    /// Stable name, e.g. `conv0` or `dense6`.
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub init: InitScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    /// Per-example input shape `[height, width, channels]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Scnn,
    Lenet,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "scnn" => Ok(Architecture::Scnn),
            "lenet" => Ok(Architecture::Lenet),
            other => Err(Error::Invalid(format!(
                "unknown architecture `{other}` (expected mlp, scnn or lenet)"
            ))),
        }
    }
}

impl ModelGraph {
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let graph = ModelGraph {
            input_shape,
            layers,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn build(arch: Architecture, input_shape: [usize; 3], classes: usize) -> Result<Self> {
        match arch {
            Architecture::Mlp => Self::mlp(input_shape, 32, classes),
            Architecture::Scnn => Self::scnn(input_shape, classes),
            Architecture::Lenet => Self::lenet(input_shape, classes),
        }
    }

    /// Flatten, one hidden relu layer, linear read-out.
    pub fn mlp(input_shape: [usize; 3], hidden: usize, classes: usize) -> Result<Self> {
        let features = input_shape.iter().product();
        Self::new(
            input_shape,
            vec![
                LayerSpec::Flatten,
                LayerSpec::dense(features, hidden),
                LayerSpec::Relu,
                LayerSpec::dense(hidden, classes),
            ],
        )
    }

    /// Two 3×3 conv/relu/pool blocks followed by two dense layers.
    pub fn scnn(input_shape: [usize; 3], classes: usize) -> Result<Self> {
        let [h, w, c] = input_shape;
        let side = |x: usize| ((x.saturating_sub(2)) / 2).saturating_sub(2) / 2;
        let flat = side(h) * side(w) * 16;
        Self::new(
            input_shape,
            vec![
                LayerSpec::conv(c, 8, 3, Padding::Valid),
                LayerSpec::Relu,
                LayerSpec::Maxpool,
                LayerSpec::conv(8, 16, 3, Padding::Valid),
                LayerSpec::Relu,
                LayerSpec::Maxpool,
                LayerSpec::Flatten,
                LayerSpec::dense(flat, 64),
                LayerSpec::Relu,
                LayerSpec::dense(64, classes),
            ],
        )
    }

    /// LeNet-5 layout: 5×5 convolutions with 6 and 16 maps, dense 120/84.
    pub fn lenet(input_shape: [usize; 3], classes: usize) -> Result<Self> {
        let [h, w, c] = input_shape;
        let side = |x: usize| (x / 2).saturating_sub(4) / 2;
        let flat = side(h) * side(w) * 16;
        Self::new(
            input_shape,
            vec![
                LayerSpec::conv(c, 6, 5, Padding::Same),
                LayerSpec::Relu,
                LayerSpec::Maxpool,
                LayerSpec::conv(6, 16, 5, Padding::Valid),
                LayerSpec::Relu,
                LayerSpec::Maxpool,
                LayerSpec::Flatten,
                LayerSpec::dense(flat, 120),
                LayerSpec::Relu,
                LayerSpec::dense(120, 84),
                LayerSpec::Relu,
                LayerSpec::dense(84, classes),
            ],
        )
    }

    /// Per-example output shape after every layer; errors name the first
    /// incompatible layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |reason: String| Error::Layer {
                layer: format!("{}{}", layer.kind(), i),
                reason,
            };
            shape = match layer {
                LayerSpec::Dense { inputs, outputs } => {
                    if shape.len() != 1 || shape[0] != *inputs {
                        return Err(fail(format!(
                            "expects {inputs} input features, receives shape {shape:?}"
                        )));
                    }
                    vec![*outputs]
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if shape.len() != 3 || shape[2] != *in_channels {
                        return Err(fail(format!(
                            "expects {in_channels} input channels, receives shape {shape:?}"
                        )));
                    }
                    if *stride != 1 && *stride != 2 {
                        return Err(fail(format!("unsupported stride {stride}")));
                    }
                    let extent = |x| conv_extent(x, *kernel, *stride, *padding);
                    match (extent(shape[0]), extent(shape[1])) {
                        (Some((oh, _)), Some((ow, _))) => vec![oh, ow, *out_channels],
                        _ => {
                            return Err(fail(format!(
                                "{kernel}x{kernel} kernel does not fit input {shape:?}"
                            )))
                        }
                    }
                }
                LayerSpec::Maxpool => {
                    if shape.len() != 3 || shape[0] < 2 || shape[1] < 2 {
                        return Err(fail(format!("cannot pool shape {shape:?}")));
                    }
                    vec![shape[0] / 2, shape[1] / 2, shape[2]]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
            };
            if shape.iter().any(|&d| d == 0) {
                return Err(fail(format!("produces empty shape {shape:?}")));
            }
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("model graph has no layers".into()));
        }
        let shapes = self.layer_shapes()?;
        let last = shapes.last().expect("non-empty");
        if last.len() != 1 || last[0] < 2 {
            return Err(Error::Invalid(format!(
                "model must end in a vector of at least 2 logits, got {last:?}"
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.layer_shapes().ok().and_then(|s| s.last().map(|l| l[0])).unwrap_or(0)
    }

    pub fn param_layers(&self) -> Vec<ParamLayer> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let followed_by_relu = matches!(self.layers.get(i + 1), Some(LayerSpec::Relu));
            let init = if followed_by_relu {
                InitScheme::HeUniform
            } else {
                InitScheme::GlorotUniform
            };
            let (weight_shape, bias_shape, fan_in, fan_out) = match layer {
                LayerSpec::Dense { inputs, outputs } => {
                    (vec![*inputs, *outputs], vec![*outputs], *inputs, *outputs)
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    vec![*kernel, *kernel, *in_channels, *out_channels],
                    vec![*out_channels],
                    kernel * kernel * in_channels,
                    kernel * kernel * out_channels,
                ),
                _ => continue,
            };
            out.push(ParamLayer {
                layer_index: i,
                name: format!("{}{}", layer.kind(), i),
                weight_shape,
                bias_shape,
                fan_in,
                fan_out,
                init,
            });
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_layers()
            .iter()
            .map(|p| p.weight_shape.iter().product::<usize>() + p.bias_shape[0])
            .sum()
    }
}
