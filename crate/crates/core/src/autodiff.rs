//! Reverse-mode automatic differentiation over a fixed primitive set.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes only ever
//! reference earlier nodes, so a single reverse sweep over the node list is a
//! valid topological order for backpropagation.

use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry, MatView, Padding};
use crate::tensor::{sigmoid, softplus, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive operations a tape can record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Add,
    Mul,
    /// Multiplication by a constant scalar.
    Scale(f64),
    MatMul,
    Conv2d { stride: usize, padding: Padding },
    MaxPool2x2,
    Relu,
    Softplus,
    Exp,
    Log,
    Sum,
    Mean,
    Reshape,
    /// Tile a `[C]` (or scalar) tensor across leading axes.
    Broadcast,
    /// Row-wise log-softmax over the last axis of a 2-D tensor.
    LogSoftmax,
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::MaxPool2x2 => "maxpool2x2",
            Primitive::Relu => "relu",
            Primitive::Softplus => "softplus",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Reshape => "reshape",
            Primitive::Broadcast => "broadcast",
            Primitive::LogSoftmax => "log_softmax",
        };
        f.write_str(name)
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
        cols: Option<Vec<f64>>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Broadcast(Var),
    LogSoftmax(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_str(shapes: &[&[usize]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Evaluates `op` on `inputs` and records it. `shape` is consulted only by
    /// `Reshape` and `Broadcast`.
    pub fn forward_primitive(
        &mut self,
        op: Primitive,
        inputs: &[Var],
        shape: Option<&[usize]>,
    ) -> Result<Var> {
        let arity = match op {
            Primitive::Add | Primitive::Mul | Primitive::MatMul | Primitive::Conv2d { .. } => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Invalid(format!(
                "{op}: expected {arity} inputs, got {}",
                inputs.len()
            )));
        }
        let need_shape = || {
            shape.ok_or_else(|| Error::Invalid(format!("{op}: target shape required")))
        };
        match op {
            Primitive::Add => self.add(inputs[0], inputs[1]),
            Primitive::Mul => self.mul(inputs[0], inputs[1]),
            Primitive::Scale(c) => Ok(self.scale(inputs[0], c)),
            Primitive::MatMul => self.matmul(inputs[0], inputs[1]),
            Primitive::Conv2d { stride, padding } => {
                self.conv2d(inputs[0], inputs[1], stride, padding)
            }
            Primitive::MaxPool2x2 => self.maxpool2x2(inputs[0]),
            Primitive::Relu => Ok(self.relu(inputs[0])),
            Primitive::Softplus => Ok(self.softplus(inputs[0])),
            Primitive::Exp => Ok(self.exp(inputs[0])),
            Primitive::Log => self.log(inputs[0]),
            Primitive::Sum => Ok(self.sum(inputs[0])),
            Primitive::Mean => Ok(self.mean(inputs[0])),
            Primitive::Reshape => self.reshape(inputs[0], need_shape()?),
            Primitive::Broadcast => self.broadcast(inputs[0], need_shape()?),
            Primitive::LogSoftmax => self.log_softmax(inputs[0]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", shape_str(&[va.shape(), vb.shape()])));
        }
        let out = va.zip_map(vb, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", shape_str(&[va.shape(), vb.shape()])));
        }
        let out = va.zip_map(vb, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("square of a single operand")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape("matmul", shape_str(&[va.shape(), vb.shape()])));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let out = Tensor::from_parts(vec![m, n], kernels::matmul(va.data(), m, k, vb.data(), n));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (vi, vk) = (self.value(input), self.value(kernel));
        let geom = ConvGeometry::new(vi.shape(), vk.shape(), stride, padding).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!(
                    "{} (stride {stride}, {padding:?} padding)",
                    shape_str(&[vi.shape(), vk.shape()])
                ),
            )
        })?;
        let (out, cols) = geom.forward(vi.data(), vk.data());
        let out = Tensor::from_parts(geom.output_shape(), out);
        let cols = self.rg(kernel).then_some(cols);
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let vi = self.value(input);
        if vi.ndim() != 4 || vi.shape()[1] < 2 || vi.shape()[2] < 2 {
            return Err(Error::shape("maxpool2x2", format!("{:?}", vi.shape())));
        }
        let (out, argmax, shape) = kernels::maxpool2x2(vi.data(), vi.shape());
        let rg = self.rg(input);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool { input, argmax }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Invalid("log: non-positive input".into()));
        }
        let out = va.map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Tiles `a` (shape `[C]` or scalar) to `shape`, whose last axis must be `C`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let n: usize = shape.iter().product();
        let out = match va.shape() {
            [] => Tensor::full(shape, va.item()),
            [c] if shape.last() == Some(c) && *c > 0 => {
                let mut data = Vec::with_capacity(n);
                for _ in 0..n / c {
                    data.extend_from_slice(va.data());
                }
                Tensor::from_parts(shape.to_vec(), data)
            }
            s => {
                return Err(Error::shape("broadcast", shape_str(&[s, shape])));
            }
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Broadcast(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.ndim() != 2 || va.shape()[1] == 0 {
            return Err(Error::shape("log_softmax", format!("{:?}", va.shape())));
        }
        let cols = va.shape()[1];
        let out = Tensor::from_parts(va.shape().to_vec(), kernels::log_softmax_rows(va.data(), cols));
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    /// Backpropagates from the scalar `loss`, returning gradients for every
    /// node the loss depends on that requires a gradient. The tape itself is
    /// not modified, so repeated calls yield identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| c * x)),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(
                        1.0,
                        MatView::row_major(g.data(), m, n),
                        MatView::row_major(vb.data(), k, n).t(),
                        0.0,
                        &mut ga,
                    );
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(
                        1.0,
                        MatView::row_major(va.data(), m, k).t(),
                        MatView::row_major(g.data(), m, n),
                        0.0,
                        &mut gb,
                    );
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                if self.rg(*kernel) {
                    let cols = cols.as_ref().expect("conv2d columns cached for trainable kernel");
                    let gk = geom.grad_kernel(cols, g.data());
                    let shape = self.shape(*kernel).to_vec();
                    self.accumulate(grads, *kernel, Tensor::from_parts(shape, gk));
                }
                if self.rg(*input) {
                    let gi = geom.grad_input(self.value(*kernel).data(), g.data());
                    let shape = self.shape(*input).to_vec();
                    self.accumulate(grads, *input, Tensor::from_parts(shape, gi));
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = Tensor::zeros(self.shape(*input));
                let d = gi.data_mut();
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    d[i] += gv;
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(&node.value, |gv, y| gv * y);
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv / x);
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ga = Tensor::full(self.shape(*a), g.item());
                self.accumulate(grads, *a, ga);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let ga = Tensor::full(self.shape(*a), g.item() / n);
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let ga = g.clone().reshape(self.shape(*a)).expect("reshape back");
                self.accumulate(grads, *a, ga);
            }
            Op::Broadcast(a) => {
                let src = self.shape(*a).to_vec();
                let ga = if src.is_empty() {
                    Tensor::scalar(g.sum())
                } else {
                    let c = src[0];
                    let mut acc = vec![0.0; c];
                    for chunk in g.data().chunks(c) {
                        for (s, v) in acc.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    Tensor::from_parts(src, acc)
                };
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let cols = node.value.shape()[1];
                let mut ga = Vec::with_capacity(g.len());
                for (grow, yrow) in g.data().chunks(cols).zip(node.value.data().chunks(cols)) {
                    let gs: f64 = grow.iter().sum();
                    ga.extend(grow.iter().zip(yrow).map(|(gv, y)| gv - y.exp() * gs));
                }
                let shape = node.value.shape().to_vec();
                self.accumulate(grads, *a, Tensor::from_parts(shape, ga));
            }
        }
    }
}
