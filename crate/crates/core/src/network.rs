//! Feed-forward networks of affine layers followed by monotone activations.
//!
//! Data flows as `[features, batch]` matrices. Convolutions are lowered to
//! an im2col gather followed by a matmul so that every affine layer shares
//! one code path, both for exact evaluation and for interval propagation.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{Backend, Plain};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{GatherIndex, Tensor, Unary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Relu,
        Activation::Softplus,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self.unary() {
            Some(op) => op.apply(x),
            None => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => Unary::Heaviside.apply(x),
            Activation::Softplus => math::sigmoid(x),
            Activation::Sigmoid => math::sigmoid_prime(x),
            Activation::Tanh => math::tanh_prime(x),
            Activation::Identity => 1.0,
        }
    }

    fn unary(self) -> Option<Unary> {
        match self {
            Activation::Relu => Some(Unary::Relu),
            Activation::Softplus => Some(Unary::Softplus),
            Activation::Sigmoid => Some(Unary::Sigmoid),
            Activation::Tanh => Some(Unary::Tanh),
            Activation::Identity => None,
        }
    }

    pub(crate) fn apply_on<B: Backend>(self, b: &B, v: &B::Value) -> B::Value {
        match self.unary() {
            Some(op) => b.unary(op, v),
            None => v.clone(),
        }
    }

    /// `σ'(v)` on a backend; `None` for the identity.
    pub(crate) fn derivative_on<B: Backend>(self, b: &B, v: &B::Value) -> Result<Option<B::Value>> {
        Ok(match self {
            Activation::Identity => None,
            Activation::Relu => Some(b.unary(Unary::Heaviside, v)),
            Activation::Softplus => Some(b.unary(Unary::Sigmoid, v)),
            Activation::Sigmoid => {
                let s = b.unary(Unary::Sigmoid, v);
                let s2 = b.mul(&s, &s)?;
                Some(b.sub(&s, &s2)?)
            }
            Activation::Tanh => {
                let t = b.unary(Unary::Tanh, v);
                let t2 = b.mul(&t, &t)?;
                let ones = b.constant(Tensor::full(b.shape(v), 1.0));
                Some(b.sub(&ones, &t2)?)
            }
        })
    }
}

/// Convolution shape bookkeeping for a `[channels, height, width]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_len(&self) -> usize {
        self.filters * self.positions()
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 || self.filters == 0 {
            return Err(Error::contract("convolution needs positive stride, kernel and filters"));
        }
        if self.kernel_h > self.in_height + 2 * self.padding
            || self.kernel_w > self.in_width + 2 * self.padding
        {
            return Err(Error::contract(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kernel_h, self.kernel_w, self.in_height, self.in_width
            )));
        }
        Ok(())
    }

    /// im2col map from `[in_len, batch]` to `[patch_len, positions * batch]`.
    pub fn im2col(&self, batch: usize) -> Result<GatherIndex> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let p_total = oh * ow;
        let cols = p_total * batch;
        let mut index = vec![GatherIndex::ZERO; self.patch_len() * cols];
        for c in 0..self.in_channels {
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let r = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if iy < 0
                                || ix < 0
                                || iy as usize >= self.in_height
                                || ix as usize >= self.in_width
                            {
                                continue;
                            }
                            let src_row = (c * self.in_height + iy as usize) * self.in_width + ix as usize;
                            let p = oy * ow + ox;
                            for bi in 0..batch {
                                index[r * cols + p * batch + bi] = (src_row * batch + bi) as u32;
                            }
                        }
                    }
                }
            }
        }
        GatherIndex::new(
            vec![self.in_len(), batch],
            vec![self.patch_len(), cols],
            index,
        )
    }
}

/// Architecture description used to build a freshly initialised [`Network`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        out_features: usize,
        activation: Activation,
    },
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    },
    Flatten,
}

/// A layer with its parameters. Weights are `[out, in]` (dense) or
/// `[filters, channels * kh * kw]` (convolution); biases are `[out, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense {
        weight: Tensor,
        bias: Tensor,
        activation: Activation,
    },
    Conv2d {
        geometry: ConvGeometry,
        weight: Tensor,
        bias: Tensor,
        activation: Activation,
    },
    Flatten,
}

impl Layer {
    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense { activation, .. } | Layer::Conv2d { activation, .. } => *activation,
            Layer::Flatten => Activation::Identity,
        }
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { weight, .. } | Layer::Conv2d { weight, .. } => Some(weight),
            Layer::Flatten => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => Some(bias),
            Layer::Flatten => None,
        }
    }
}

/// Loss whose input gradient is the explanation.
#[derive(Clone, Debug, PartialEq)]
pub enum LossKind {
    /// Softmax cross-entropy against the true class.
    CrossEntropy(usize),
    /// The raw logit of one class.
    ClassLogit(usize),
    /// `sum_k (z_k - y_k)^2` against a regression target.
    SquaredError(Vec<f64>),
}

/// Parameters of one affine layer lifted onto a backend.
#[derive(Clone, Debug)]
pub struct Affine<V> {
    pub weight: V,
    pub bias: V,
}

/// Pre-activation and activation of one layer.
#[derive(Clone, Debug)]
pub struct LayerTrace<V> {
    pub pre: V,
    pub post: V,
}

/// Logits together with the per-layer traces used by the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Tensor,
    pub traces: Vec<LayerTrace<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    classes: usize,
}

impl Network {
    /// Assembles a network from explicit layers, checking that shapes compose.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = next_shape(i, &shape, layer)?;
        }
        if shape.len() != 1 || shape[0] == 0 {
            return Err(Error::contract(format!(
                "network must end in a flat, non-empty output; got shape {shape:?}"
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            classes: shape[0],
        })
    }

    /// Builds a network from an architecture with randomly initialised weights
    /// (He-uniform for ReLU layers, Glorot-uniform otherwise; zero biases).
    pub fn init<R: Rng + ?Sized>(input_shape: Vec<usize>, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { out_features, activation } => {
                    if shape.len() != 1 {
                        return Err(Error::contract(format!(
                            "dense layer needs a flat input, got {shape:?}; insert a flatten layer"
                        )));
                    }
                    let fan_in = shape[0];
                    Layer::Dense {
                        weight: random_weight(rng, out_features, fan_in, fan_in, out_features, activation),
                        bias: Tensor::zeros(vec![out_features, 1]),
                        activation,
                    }
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    activation,
                } => {
                    if shape.len() != 3 {
                        return Err(Error::contract(format!(
                            "convolution needs a [channels, height, width] input, got {shape:?}"
                        )));
                    }
                    let geometry = ConvGeometry {
                        in_channels: shape[0],
                        in_height: shape[1],
                        in_width: shape[2],
                        filters,
                        kernel_h,
                        kernel_w,
                        stride,
                        padding,
                    };
                    geometry.validate()?;
                    let fan_in = geometry.patch_len();
                    let fan_out = filters * kernel_h * kernel_w;
                    Layer::Conv2d {
                        geometry,
                        weight: random_weight(rng, filters, fan_in, fan_in, fan_out, activation),
                        bias: Tensor::zeros(vec![filters, 1]),
                        activation,
                    }
                }
            };
            shape = next_shape(layers.len(), &shape, &layer)?;
            layers.push(layer);
        }
        Self::from_layers(input_shape, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Every weight and bias in layer order (weight before bias).
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => vec![weight, bias],
                Layer::Flatten => vec![],
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => vec![weight, bias],
                Layer::Flatten => vec![],
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Lifts the parameters onto a backend with `make` (e.g. as graph leaves).
    pub fn lift<B: Backend>(&self, b: &B, mut make: impl FnMut(&B, Tensor) -> B::Value) -> Vec<Option<Affine<B::Value>>> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => Some(Affine {
                    weight: make(b, weight.clone()),
                    bias: make(b, bias.clone()),
                }),
                Layer::Flatten => None,
            })
            .collect()
    }

    /// Reshapes a single input into an `[n, 1]` column.
    pub fn input_column(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.input_len() {
            return Err(Error::dim("network input", x.shape(), &self.input_shape));
        }
        x.clone().reshape(vec![self.input_len(), 1])
    }

    fn check_batch(&self, xs: &Tensor) -> Result<usize> {
        if xs.shape().len() != 2 || xs.rows() != self.input_len() {
            return Err(Error::dim("network batch input", xs.shape(), &[self.input_len(), 0]));
        }
        Ok(xs.cols())
    }

    /// Exact forward pass of one input.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        self.forward_batch(&self.input_column(x)?)
    }

    /// Exact forward pass of an `[n, batch]` input matrix.
    pub fn forward_batch(&self, xs: &Tensor) -> Result<ForwardPass> {
        self.check_batch(xs)?;
        let params = self.lift(&Plain, |_, t| t);
        let traces = forward_on(&Plain, self, &params, xs)?;
        let logits = traces.last().map_or_else(|| xs.clone(), |t| t.post.clone());
        Ok(ForwardPass { logits, traces })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits.into_data())
    }

    /// Exact gradient of `loss` with respect to the input.
    pub fn input_gradient(&self, x: &Tensor, loss: &LossKind) -> Result<Tensor> {
        let column = self.input_column(x)?;
        let grads = self.input_gradient_batch(&column, core::slice::from_ref(loss))?;
        grads.reshape(x.shape().to_vec())
    }

    /// Input gradients for every column of `xs`, one loss per column.
    pub fn input_gradient_batch(&self, xs: &Tensor, losses: &[LossKind]) -> Result<Tensor> {
        let batch = self.check_batch(xs)?;
        if losses.len() != batch {
            return Err(Error::dim("input_gradient losses", &[batch], &[losses.len()]));
        }
        let params = self.lift(&Plain, |_, t| t);
        let traces = forward_on(&Plain, self, &params, xs)?;
        let logits = traces.last().map_or_else(|| xs.clone(), |t| t.post.clone());
        let seed = seed_on(&Plain, &logits, losses, self.classes)?;
        backprop_on(&Plain, self, &params, &traces, seed)
    }

    /// Argmax of the logits; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn predict_batch(&self, xs: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward_batch(xs)?.logits;
        Ok((0..logits.cols()).map(|j| argmax(&logits.column_values(j))).collect())
    }

    /// Scalar loss of a single input.
    pub fn loss(&self, x: &Tensor, loss: &LossKind) -> Result<f64> {
        let logits = self.logits(x)?;
        loss_value(&logits, loss)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scalar value of `loss` at the given logits.
pub fn loss_value(logits: &[f64], loss: &LossKind) -> Result<f64> {
    check_loss(loss, logits.len())?;
    Ok(match loss {
        LossKind::CrossEntropy(c) => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + math::ln(logits.iter().map(|z| math::exp(z - m)).sum());
            lse - logits[*c]
        }
        LossKind::ClassLogit(c) => logits[*c],
        LossKind::SquaredError(y) => logits.iter().zip(y).map(|(z, t)| (z - t) * (z - t)).sum(),
    })
}

pub(crate) fn check_loss(loss: &LossKind, classes: usize) -> Result<()> {
    match loss {
        LossKind::CrossEntropy(c) | LossKind::ClassLogit(c) if *c >= classes => Err(Error::contract(format!(
            "class {c} out of range for {classes} outputs"
        ))),
        LossKind::SquaredError(y) if y.len() != classes => {
            Err(Error::dim("squared-error target", &[y.len()], &[classes]))
        }
        _ => Ok(()),
    }
}

fn next_shape(index: usize, shape: &[usize], layer: &Layer) -> Result<Vec<usize>> {
    let mismatch = |what: String| Error::contract(format!("layer {index}: {what}"));
    match layer {
        Layer::Flatten => Ok(vec![shape.iter().product()]),
        Layer::Dense { weight, bias, .. } => {
            if shape.len() != 1 {
                return Err(mismatch(format!("dense layer needs a flat input, got {shape:?}")));
            }
            let out = weight.rows();
            if weight.shape() != [out, shape[0]] || bias.shape() != [out, 1] {
                return Err(mismatch(format!(
                    "weight {:?} / bias {:?} do not fit input {:?}",
                    weight.shape(),
                    bias.shape(),
                    shape
                )));
            }
            Ok(vec![out])
        }
        Layer::Conv2d { geometry, weight, bias, .. } => {
            geometry.validate()?;
            let g = geometry;
            if shape != [g.in_channels, g.in_height, g.in_width] {
                return Err(mismatch(format!("convolution expects input {:?}, got {shape:?}", [g.in_channels, g.in_height, g.in_width])));
            }
            if weight.shape() != [g.filters, g.patch_len()] || bias.shape() != [g.filters, 1] {
                return Err(mismatch(format!(
                    "convolution weight {:?} / bias {:?} do not fit geometry",
                    weight.shape(),
                    bias.shape()
                )));
            }
            Ok(vec![g.filters, g.out_height(), g.out_width()])
        }
    }
}

fn random_weight<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
) -> Tensor {
    let limit = if activation == Activation::Relu {
        math::sqrt(6.0 / fan_in as f64)
    } else {
        math::sqrt(6.0 / (fan_in + fan_out) as f64)
    };
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Affine map of one layer on a backend: `W z + b` (or its convolutional form).
pub(crate) fn affine_on<B: Backend>(b: &B, layer: &Layer, p: &Affine<B::Value>, z: &B::Value, batch: usize) -> Result<B::Value> {
    match layer {
        Layer::Dense { .. } => {
            let wz = b.matmul(&p.weight, z)?;
            b.add_bias(&wz, &p.bias)
        }
        Layer::Conv2d { geometry, .. } => {
            let index = Arc::new(geometry.im2col(batch)?);
            let cols = b.gather(z, &index)?;
            let y = b.add_bias(&b.matmul(&p.weight, &cols)?, &p.bias)?;
            b.reshape(&y, vec![geometry.out_len(), batch])
        }
        Layer::Flatten => Ok(z.clone()),
    }
}

/// Transposed affine map used by the backward recursion: `W^T e`.
pub(crate) fn transpose_on<B: Backend>(b: &B, layer: &Layer, weight_t: &B::Value, e: &B::Value, batch: usize) -> Result<B::Value> {
    match layer {
        Layer::Dense { .. } => b.matmul(weight_t, e),
        Layer::Conv2d { geometry, .. } => {
            let e2 = b.reshape(e, vec![geometry.filters, geometry.positions() * batch])?;
            let cols = b.matmul(weight_t, &e2)?;
            let index = Arc::new(geometry.im2col(batch)?);
            b.scatter_add(&cols, &index)
        }
        Layer::Flatten => Ok(e.clone()),
    }
}

pub(crate) fn forward_on<B: Backend>(
    b: &B,
    net: &Network,
    params: &[Option<Affine<B::Value>>],
    xs: &B::Value,
) -> Result<Vec<LayerTrace<B::Value>>> {
    let batch = b.read(xs, |t| t.cols());
    let mut z = xs.clone();
    let mut traces = Vec::with_capacity(net.layers.len());
    for (layer, p) in net.layers.iter().zip(params) {
        let trace = match (layer, p) {
            (Layer::Flatten, _) => LayerTrace { pre: z.clone(), post: z.clone() },
            (_, Some(p)) => {
                let pre = affine_on(b, layer, p, &z, batch)?;
                let post = layer.activation().apply_on(b, &pre);
                LayerTrace { pre, post }
            }
            (_, None) => return Err(Error::contract("missing parameters for affine layer")),
        };
        z = trace.post.clone();
        traces.push(trace);
    }
    Ok(traces)
}

/// `d^(K)`: derivative of the loss with respect to the logits, one column per example.
pub(crate) fn seed_on<B: Backend>(b: &B, logits: &B::Value, losses: &[LossKind], classes: usize) -> Result<B::Value> {
    for loss in losses {
        check_loss(loss, classes)?;
    }
    let batch = losses.len();
    let same_kind = losses
        .windows(2)
        .all(|w| core::mem::discriminant(&w[0]) == core::mem::discriminant(&w[1]));
    if !same_kind {
        return Err(Error::contract("a batch must use a single loss kind"));
    }
    let onehot = |classes_of: &dyn Fn(&LossKind) -> usize| {
        let mut t = Tensor::zeros(vec![classes, batch]);
        for (j, loss) in losses.iter().enumerate() {
            t.data_mut()[classes_of(loss) * batch + j] = 1.0;
        }
        t
    };
    let class_of = |l: &LossKind| match l {
        LossKind::CrossEntropy(c) | LossKind::ClassLogit(c) => *c,
        LossKind::SquaredError(_) => 0,
    };
    match losses.first() {
        None => Err(Error::contract("empty batch")),
        Some(LossKind::CrossEntropy(_)) => {
            let p = b.softmax_columns(logits)?;
            let y = b.constant(onehot(&class_of));
            b.sub(&p, &y)
        }
        Some(LossKind::ClassLogit(_)) => Ok(b.constant(onehot(&class_of))),
        Some(LossKind::SquaredError(_)) => {
            let y = b.constant(targets_matrix(losses, classes));
            Ok(b.scale(&b.sub(logits, &y)?, 2.0))
        }
    }
}

pub(crate) fn targets_matrix(losses: &[LossKind], classes: usize) -> Tensor {
    let batch = losses.len();
    let mut t = Tensor::zeros(vec![classes, batch]);
    for (j, loss) in losses.iter().enumerate() {
        if let LossKind::SquaredError(y) = loss {
            for (k, &v) in y.iter().enumerate() {
                t.data_mut()[k * batch + j] = v;
            }
        }
    }
    t
}

/// Exact backward recursion `d^(k-1) = W^(k)^T (σ'(ζ^(k)) ⊙ d^(k))`.
pub(crate) fn backprop_on<B: Backend>(
    b: &B,
    net: &Network,
    params: &[Option<Affine<B::Value>>],
    traces: &[LayerTrace<B::Value>],
    seed: B::Value,
) -> Result<B::Value> {
    let batch = b.read(&seed, |t| t.cols());
    let mut d = seed;
    for ((layer, p), trace) in net.layers.iter().zip(params).zip(traces).rev() {
        let Some(p) = p else { continue };
        let e = match layer.activation().derivative_on(b, &trace.pre)? {
            Some(g) => b.mul(&g, &d)?,
            None => d,
        };
        let wt = b.transpose(&p.weight)?;
        d = transpose_on(b, layer, &wt, &e, batch)?;
    }
    Ok(d)
}
