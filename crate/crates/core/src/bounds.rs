//! Joint propagation of input and parameter intervals through the forward and
//! backward passes, yielding a [`GradientBox`] that encloses every input
//! gradient reachable inside `T x M`.

use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{Backend, Plain};
use crate::error::{Error, Result};
use crate::interval::{
    activation_on, derivative_bounds_on, hadamard_on, lemma_on, seed_bounds_on, CenterRadius, GradientBox,
    InputRegion, IntervalMatrix, Iv, ModelRegion,
};
use crate::network::{Affine, Layer, LossKind, Network};
use crate::tensor::Tensor;

/// Affine-layer product used for bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BoundMethod {
    /// Closed-form center/radius enclosure; differentiable, used in training.
    #[default]
    ClosedForm,
    /// Per-term corner extremes; tighter, evaluation only.
    ExactCorners,
}

/// Parameter intervals of one affine layer.
pub(crate) struct ParamBounds<V> {
    weight: CenterRadius<V>,
    weight_t: CenterRadius<V>,
    bias_lo: V,
    bias_hi: V,
}

pub(crate) fn param_bounds_on<B: Backend>(
    b: &B,
    params: &[Option<Affine<B::Value>>],
    model: &ModelRegion,
) -> Result<Vec<Option<ParamBounds<B::Value>>>> {
    let mut affine_index = 0;
    let mut out = Vec::with_capacity(params.len());
    for p in params {
        let Some(p) = p else {
            out.push(None);
            continue;
        };
        let gamma = model.gamma(affine_index);
        affine_index += 1;
        let wt = b.transpose(&p.weight)?;
        let pb = if gamma == 0.0 {
            ParamBounds {
                weight: CenterRadius { mid: p.weight.clone(), rad: None },
                weight_t: CenterRadius { mid: wt, rad: None },
                bias_lo: p.bias.clone(),
                bias_hi: p.bias.clone(),
            }
        } else {
            let rad = b.scale(&b.abs(&p.weight), gamma);
            let rad_t = b.transpose(&rad)?;
            let brad = b.scale(&b.abs(&p.bias), gamma);
            ParamBounds {
                weight: CenterRadius { mid: p.weight.clone(), rad: Some(rad) },
                weight_t: CenterRadius { mid: wt, rad: Some(rad_t) },
                bias_lo: b.sub(&p.bias, &brad)?,
                bias_hi: b.add(&p.bias, &brad)?,
            }
        };
        out.push(Some(pb));
    }
    Ok(out)
}

fn interval_product<B: Backend>(
    b: &B,
    a: &CenterRadius<B::Value>,
    x: &Iv<B::Value>,
    method: BoundMethod,
) -> Result<Iv<B::Value>> {
    match method {
        BoundMethod::ClosedForm => {
            let x = crate::interval::to_center_radius(b, x)?;
            lemma_on(b, a, &x)
        }
        BoundMethod::ExactCorners => {
            let (alo, ahi) = match &a.rad {
                Some(r) => (b.sub(&a.mid, r)?, b.add(&a.mid, r)?),
                None => (a.mid.clone(), a.mid.clone()),
            };
            let (lo, hi) = b.corner_matmul((&alo, &ahi), (&x.lo, &x.hi))?;
            Ok(Iv { lo, hi })
        }
    }
}

/// Pre- and post-activation intervals of one layer.
pub(crate) struct BoundTrace<V> {
    pub pre: Iv<V>,
    pub post: Iv<V>,
}

pub(crate) fn forward_bounds_on<B: Backend>(
    b: &B,
    net: &Network,
    pbs: &[Option<ParamBounds<B::Value>>],
    input: Iv<B::Value>,
    method: BoundMethod,
) -> Result<Vec<BoundTrace<B::Value>>> {
    let batch = b.read(&input.lo, |t| t.cols());
    let mut z = input;
    let mut traces = Vec::with_capacity(net.layers().len());
    for (layer, pb) in net.layers().iter().zip(pbs) {
        let (pre, post) = match (layer, pb) {
            (Layer::Flatten, _) => (z.clone(), z.clone()),
            (Layer::Dense { activation, .. }, Some(pb)) => {
                let prod = interval_product(b, &pb.weight, &z, method)?;
                let pre = Iv {
                    lo: b.add_bias(&prod.lo, &pb.bias_lo)?,
                    hi: b.add_bias(&prod.hi, &pb.bias_hi)?,
                };
                let post = activation_on(b, *activation, &pre);
                (pre, post)
            }
            (Layer::Conv2d { geometry, activation, .. }, Some(pb)) => {
                let index = alloc::sync::Arc::new(geometry.im2col(batch)?);
                let cols = Iv {
                    lo: b.gather(&z.lo, &index)?,
                    hi: b.gather(&z.hi, &index)?,
                };
                let prod = interval_product(b, &pb.weight, &cols, method)?;
                let shape = vec![geometry.out_len(), batch];
                let pre = Iv {
                    lo: b.reshape(&b.add_bias(&prod.lo, &pb.bias_lo)?, shape.clone())?,
                    hi: b.reshape(&b.add_bias(&prod.hi, &pb.bias_hi)?, shape)?,
                };
                let post = activation_on(b, *activation, &pre);
                (pre, post)
            }
            _ => return Err(Error::contract("missing parameters for affine layer")),
        };
        z = post.clone();
        traces.push(BoundTrace { pre, post });
    }
    Ok(traces)
}

pub(crate) fn backward_bounds_on<B: Backend>(
    b: &B,
    net: &Network,
    pbs: &[Option<ParamBounds<B::Value>>],
    traces: &[BoundTrace<B::Value>],
    seed: Iv<B::Value>,
    method: BoundMethod,
) -> Result<Iv<B::Value>> {
    let batch = b.read(&seed.lo, |t| t.cols());
    let mut d = seed;
    for ((layer, pb), trace) in net.layers().iter().zip(pbs).zip(traces).rev() {
        let Some(pb) = pb else { continue };
        let e = match derivative_bounds_on(b, layer.activation(), &trace.pre)? {
            Some(g) => hadamard_on(b, &d, &g)?,
            None => d,
        };
        d = match layer {
            Layer::Dense { .. } => interval_product(b, &pb.weight_t, &e, method)?,
            Layer::Conv2d { geometry, .. } => {
                let shape = vec![geometry.filters, geometry.positions() * batch];
                let e2 = Iv {
                    lo: b.reshape(&e.lo, shape.clone())?,
                    hi: b.reshape(&e.hi, shape)?,
                };
                let cols = interval_product(b, &pb.weight_t, &e2, method)?;
                let index = alloc::sync::Arc::new(geometry.im2col(batch)?);
                // scatter-add of interval endpoints is a sum of intervals
                Iv {
                    lo: b.scatter_add(&cols.lo, &index)?,
                    hi: b.scatter_add(&cols.hi, &index)?,
                }
            }
            Layer::Flatten => e,
        };
    }
    Ok(d)
}

/// Full explanation-bound pass on a backend for a batch of input boxes.
pub(crate) fn explanation_bounds_on<B: Backend>(
    b: &B,
    net: &Network,
    params: &[Option<Affine<B::Value>>],
    input: Iv<B::Value>,
    model: &ModelRegion,
    losses: &[LossKind],
    method: BoundMethod,
) -> Result<Iv<B::Value>> {
    let pbs = param_bounds_on(b, params, model)?;
    let traces = forward_bounds_on(b, net, &pbs, input.clone(), method)?;
    let out = traces.last().map(|t| t.post.clone()).unwrap_or(input);
    let seed = seed_bounds_on(b, losses, &out, net.classes())?;
    backward_bounds_on(b, net, &pbs, &traces, seed, method)
}

/// Per-layer interval caches from [`forward_bounds`].
#[derive(Clone, Debug)]
pub struct ForwardBounds {
    pub pre: Vec<IntervalMatrix>,
    pub post: Vec<IntervalMatrix>,
    method: BoundMethod,
}

impl ForwardBounds {
    /// Logit box (the last layer's activations).
    pub fn logits(&self) -> Option<&IntervalMatrix> {
        self.post.last()
    }
}

fn plain(iv: Iv<Tensor>) -> IntervalMatrix {
    IntervalMatrix::from_parts_unchecked(iv.lo, iv.hi)
}

fn region_columns(net: &Network, region: &InputRegion) -> Result<Iv<Tensor>> {
    let bounds = region.bounds()?;
    let n = net.input_len();
    if bounds.lower().len() != n {
        return Err(Error::dim("input region", bounds.shape(), net.input_shape()));
    }
    let (lo, hi) = bounds.into_parts();
    Ok(Iv {
        lo: lo.reshape(vec![n, 1])?,
        hi: hi.reshape(vec![n, 1])?,
    })
}

/// Interval caches of every layer over `T x M`.
pub fn forward_bounds(net: &Network, input: &InputRegion, model: &ModelRegion) -> Result<ForwardBounds> {
    forward_bounds_with(net, input, model, BoundMethod::ClosedForm)
}

pub fn forward_bounds_with(
    net: &Network,
    input: &InputRegion,
    model: &ModelRegion,
    method: BoundMethod,
) -> Result<ForwardBounds> {
    let params = net.lift(&Plain, |_, t| t);
    let pbs = param_bounds_on(&Plain, &params, model)?;
    let traces = forward_bounds_on(&Plain, net, &pbs, region_columns(net, input)?, method)?;
    let (pre, post) = traces.into_iter().map(|t| (plain(t.pre), plain(t.post))).unzip();
    Ok(ForwardBounds { pre, post, method })
}

/// Backward interval recursion from a seed interval on the logits.
pub fn backward_bounds(
    net: &Network,
    caches: &ForwardBounds,
    seed: &IntervalMatrix,
    model: &ModelRegion,
) -> Result<GradientBox> {
    if caches.pre.len() != net.layers().len() {
        return Err(Error::contract("forward caches do not belong to this network"));
    }
    let params = net.lift(&Plain, |_, t| t);
    let pbs = param_bounds_on(&Plain, &params, model)?;
    let traces: Vec<BoundTrace<Tensor>> = caches
        .pre
        .iter()
        .zip(&caches.post)
        .map(|(pre, post)| BoundTrace {
            pre: Iv { lo: pre.lower().clone(), hi: pre.upper().clone() },
            post: Iv { lo: post.lower().clone(), hi: post.upper().clone() },
        })
        .collect();
    let m = seed.lower().len();
    let seed = Iv {
        lo: seed.lower().clone().reshape(vec![m, 1])?,
        hi: seed.upper().clone().reshape(vec![m, 1])?,
    };
    let d = backward_bounds_on(&Plain, net, &pbs, &traces, seed, caches.method)?;
    into_boxes(d, net.input_shape()).map(|mut v| v.remove(0))
}

fn into_boxes(d: Iv<Tensor>, input_shape: &[usize]) -> Result<Vec<GradientBox>> {
    let batch = d.lo.cols();
    (0..batch)
        .map(|j| {
            let lo = Tensor::new(input_shape.to_vec(), d.lo.column_values(j))?;
            let hi = Tensor::new(input_shape.to_vec(), d.hi.column_values(j))?;
            GradientBox::new(lo, hi)
        })
        .collect()
}

/// Gradient box for `x` under a uniform input width `eps` and model width `gamma`.
pub fn explanation_bounds(net: &Network, x: &Tensor, eps: f64, gamma: f64, loss: &LossKind) -> Result<GradientBox> {
    let region = InputRegion::uniform(x.clone(), eps)?;
    explanation_bounds_in(net, &region, &ModelRegion::uniform(gamma), loss, BoundMethod::ClosedForm)
}

pub fn explanation_bounds_in(
    net: &Network,
    input: &InputRegion,
    model: &ModelRegion,
    loss: &LossKind,
    method: BoundMethod,
) -> Result<GradientBox> {
    let params = net.lift(&Plain, |_, t| t);
    let cols = region_columns(net, input)?;
    let d = explanation_bounds_on(&Plain, net, &params, cols, model, core::slice::from_ref(loss), method)?;
    into_boxes(d, input.center().shape()).map(|mut v| v.remove(0))
}

/// Gradient boxes for a batch of input boxes given as `[n, batch]` endpoint matrices.
pub fn explanation_bounds_batch(
    net: &Network,
    lower: &Tensor,
    upper: &Tensor,
    model: &ModelRegion,
    losses: &[LossKind],
    method: BoundMethod,
) -> Result<Vec<GradientBox>> {
    let input = IntervalMatrix::new(lower.clone(), upper.clone())?;
    if input.shape().len() != 2 || input.shape()[0] != net.input_len() || input.shape()[1] != losses.len() {
        return Err(Error::dim("explanation_bounds_batch", input.shape(), &[net.input_len(), losses.len()]));
    }
    let params = net.lift(&Plain, |_, t| t);
    let (lo, hi) = input.into_parts();
    let d = explanation_bounds_on(&Plain, net, &params, Iv { lo, hi }, model, losses, method)?;
    into_boxes(d, net.input_shape())
}

/// True iff the lower bound of logit `class` exceeds the upper bound of every
/// other logit over `T x M`, so no admissible perturbation changes the prediction.
pub fn logit_bounds_margin(net: &Network, input: &InputRegion, model: &ModelRegion, class: usize) -> Result<bool> {
    let fb = forward_bounds(net, input, model)?;
    logits_certified(fb.logits().ok_or_else(|| Error::contract("network has no layers"))?, class)
}

/// Margin check on an explicit logit box.
pub fn logits_certified(logits: &IntervalMatrix, class: usize) -> Result<bool> {
    let lo = logits.lower().data();
    let hi = logits.upper().data();
    if class >= lo.len() {
        return Err(Error::contract(alloc::format!("class {class} out of range for {} logits", lo.len())));
    }
    Ok((0..lo.len()).filter(|&k| k != class).all(|k| lo[class] > hi[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64, act: Activation) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::init(
            vec![4],
            &[
                LayerSpec::Dense { out_features: 6, activation: act },
                LayerSpec::Dense { out_features: 3, activation: Activation::Identity },
            ],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn point_regions_reproduce_exact_pass() {
        let net = small_net(1, Activation::Softplus);
        let x = Tensor::column(vec![0.1, -0.4, 0.9, 0.3]);
        let fb = forward_bounds(&net, &InputRegion::uniform(x.clone(), 0.0).unwrap(), &ModelRegion::none()).unwrap();
        let exact = net.forward(&x).unwrap();
        for (iv, t) in fb.post.iter().zip(&exact.traces) {
            assert_eq!(iv.lower(), &t.post);
            assert_eq!(iv.upper(), &t.post);
        }
        let loss = LossKind::CrossEntropy(2);
        let gb = explanation_bounds(&net, &x, 0.0, 0.0, &loss).unwrap();
        let v = net.input_gradient(&x, &loss).unwrap();
        assert!(gb.delta.max_abs() <= 1e-9);
        assert!(gb.center().max_abs_diff(&v).unwrap() <= 1e-9);
    }

    #[test]
    fn identity_net_output_box() {
        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let net = Network::from_layers(
            vec![2],
            vec![Layer::Dense { weight: eye, bias: Tensor::zeros(vec![2, 1]), activation: Activation::Identity }],
        )
        .unwrap();
        let x = Tensor::column(vec![0.5, -0.25]);
        let fb = forward_bounds(&net, &InputRegion::uniform(x, 0.1).unwrap(), &ModelRegion::none()).unwrap();
        let out = fb.logits().unwrap();
        assert!((out.lower().data()[0] - 0.4).abs() < 1e-15 && (out.upper().data()[1] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn linear_network_has_zero_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(
            vec![3],
            &[
                LayerSpec::Dense { out_features: 4, activation: Activation::Identity },
                LayerSpec::Dense { out_features: 2, activation: Activation::Identity },
            ],
            &mut rng,
        )
        .unwrap();
        let gb = explanation_bounds(&net, &Tensor::column(vec![0.2, 0.1, -0.3]), 0.7, 0.0, &LossKind::ClassLogit(1)).unwrap();
        assert!(gb.delta.data().iter().all(|d| *d == 0.0));
    }

    #[test]
    fn seed_plumbing_matches_convenience_composition() {
        let net = small_net(3, Activation::Relu);
        let x = Tensor::column(vec![0.3, 0.2, -0.1, 0.5]);
        let region = InputRegion::uniform(x.clone(), 0.05).unwrap();
        let model = ModelRegion::uniform(0.02);
        let loss = LossKind::CrossEntropy(0);
        let fb = forward_bounds(&net, &region, &model).unwrap();
        let seed = crate::interval::loss_gradient_seed_bounds(&loss, fb.logits().unwrap()).unwrap();
        let a = backward_bounds(&net, &fb, &seed, &model).unwrap();
        let b = explanation_bounds_in(&net, &region, &model, &loss, BoundMethod::ClosedForm).unwrap();
        assert_eq!(a.lower.data(), b.lower.data());
        assert_eq!(a.upper.data(), b.upper.data());
    }

    #[test]
    fn corners_are_inside_closed_form() {
        let net = small_net(4, Activation::Softplus);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let x = Tensor::column((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
            let region = InputRegion::uniform(x, 0.1).unwrap();
            let model = ModelRegion::uniform(0.05);
            let loss = LossKind::CrossEntropy(1);
            let lemma = explanation_bounds_in(&net, &region, &model, &loss, BoundMethod::ClosedForm).unwrap();
            let tight = explanation_bounds_in(&net, &region, &model, &loss, BoundMethod::ExactCorners).unwrap();
            assert!(tight.is_subset_of(&lemma, 1e-12));
        }
    }

    #[test]
    fn margin_examples() {
        let box_ = |l: [f64; 2], u: [f64; 2]| IntervalMatrix::new(Tensor::column(l.to_vec()), Tensor::column(u.to_vec())).unwrap();
        assert!(logits_certified(&box_([2.0, 0.0], [3.0, 1.0]), 0).unwrap());
        assert!(!logits_certified(&box_([0.0, 1.0], [3.0, 2.0]), 0).unwrap());
        let net = small_net(5, Activation::Relu);
        let x = Tensor::column(vec![0.4, -0.2, 0.1, 0.8]);
        let pred = net.predict(&x).unwrap();
        let point = InputRegion::uniform(x, 0.0).unwrap();
        for c in 0..3 {
            assert_eq!(logit_bounds_margin(&net, &point, &ModelRegion::none(), c).unwrap(), c == pred);
        }
    }
}
