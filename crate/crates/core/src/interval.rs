//! Interval matrices and the primitive interval operations used by bound
//! propagation.
//!
//! The generic `*_on` helpers are shared by the plain evaluators below and by
//! the recorded (differentiable) propagation used in certified training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{Backend, Plain};
use crate::error::{Error, Result};
use crate::network::{check_loss, targets_matrix, Activation, LossKind};
use crate::tensor::{Tensor, Unary};

/// Elementwise `[lower, upper]` pair of equally shaped tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMatrix {
    lower: Tensor,
    upper: Tensor,
}

impl IntervalMatrix {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::dim("interval", lower.shape(), upper.shape()));
        }
        if let Some(i) = lower
            .data()
            .iter()
            .zip(upper.data())
            .position(|(l, u)| !(l <= u))
        {
            return Err(Error::contract(format!(
                "interval lower bound exceeds upper bound at {i}: {} > {}",
                lower.data()[i],
                upper.data()[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn point(t: Tensor) -> Self {
        Self {
            lower: t.clone(),
            upper: t,
        }
    }

    pub fn from_center_radius(center: &Tensor, radius: &Tensor) -> Result<Self> {
        Self::new(center.sub(radius)?, center.add(radius)?)
    }

    pub(crate) fn from_parts_unchecked(lower: Tensor, upper: Tensor) -> Self {
        Self { lower, upper }
    }

    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn shape(&self) -> &[usize] {
        self.lower.shape()
    }

    pub fn center(&self) -> Tensor {
        self.lower.zip_with(&self.upper, "center", |l, u| 0.5 * (l + u)).expect("equal shapes")
    }

    pub fn radius(&self) -> Tensor {
        self.lower.zip_with(&self.upper, "radius", |l, u| 0.5 * (u - l)).expect("equal shapes")
    }

    pub fn width(&self) -> Tensor {
        self.upper.sub(&self.lower).expect("equal shapes")
    }

    pub fn contains(&self, t: &Tensor, slack: f64) -> bool {
        t.within(&self.lower, &self.upper, slack)
    }

    /// `self ⊆ other` elementwise, up to `slack`.
    pub fn is_subset_of(&self, other: &IntervalMatrix, slack: f64) -> bool {
        self.lower.within(&other.lower, &other.upper, slack)
            && self.upper.within(&other.lower, &other.upper, slack)
    }

    pub fn transpose(&self) -> Result<Self> {
        Ok(Self {
            lower: self.lower.transpose()?,
            upper: self.upper.transpose()?,
        })
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.lower, self.upper)
    }
}

/// Interval carried as lower/upper values on a backend.
#[derive(Clone, Debug)]
pub(crate) struct Iv<V> {
    pub lo: V,
    pub hi: V,
}

/// Interval carried as center and radius; `rad = None` means a point.
#[derive(Clone, Debug)]
pub(crate) struct CenterRadius<V> {
    pub mid: V,
    pub rad: Option<V>,
}

pub(crate) fn to_center_radius<B: Backend>(b: &B, iv: &Iv<B::Value>) -> Result<CenterRadius<B::Value>> {
    let mid = b.scale(&b.add(&iv.lo, &iv.hi)?, 0.5);
    let rad = b.scale(&b.sub(&iv.hi, &iv.lo)?, 0.5);
    Ok(CenterRadius { mid, rad: Some(rad) })
}

/// Closed-form enclosure of `A* B*` over `A* ∈ a`, `B* ∈ x`:
/// `A^μ B^μ ± (|A^μ| B^r + A^r |B^μ| + A^r B^r)`.
pub(crate) fn lemma_on<B: Backend>(
    b: &B,
    a: &CenterRadius<B::Value>,
    x: &CenterRadius<B::Value>,
) -> Result<Iv<B::Value>> {
    let mid = b.matmul(&a.mid, &x.mid)?;
    let mut rad: Option<B::Value> = None;
    let mut acc = |term: B::Value| -> Result<()> {
        rad = Some(match rad.take() {
            Some(r) => b.add(&r, &term)?,
            None => term,
        });
        Ok(())
    };
    if let Some(xr) = &x.rad {
        acc(b.matmul(&b.abs(&a.mid), xr)?)?;
    }
    if let Some(ar) = &a.rad {
        acc(b.matmul(ar, &b.abs(&x.mid))?)?;
        if let Some(xr) = &x.rad {
            acc(b.matmul(ar, xr)?)?;
        }
    }
    Ok(match rad {
        Some(r) => Iv {
            lo: b.sub(&mid, &r)?,
            hi: b.add(&mid, &r)?,
        },
        None => Iv {
            lo: mid.clone(),
            hi: mid,
        },
    })
}

/// Per-term corner extremes summed over the inner dimension.
pub(crate) fn corner_product(alo: &Tensor, ahi: &Tensor, blo: &Tensor, bhi: &Tensor) -> Result<(Tensor, Tensor)> {
    if alo.shape().len() != 2 || blo.shape().len() != 2 || alo.cols() != blo.rows() {
        return Err(Error::dim("interval_matmul_exact_corners", alo.shape(), blo.shape()));
    }
    let (m, k, n) = (alo.rows(), alo.cols(), blo.cols());
    let mut lo = vec![0.0; m * n];
    let mut hi = vec![0.0; m * n];
    for i in 0..m {
        for t in 0..k {
            let (al, au) = (alo.at(i, t), ahi.at(i, t));
            for j in 0..n {
                let (bl, bu) = (blo.at(t, j), bhi.at(t, j));
                let p = [al * bl, al * bu, au * bl, au * bu];
                lo[i * n + j] += p[0].min(p[1]).min(p[2]).min(p[3]);
                hi[i * n + j] += p[0].max(p[1]).max(p[2]).max(p[3]);
            }
        }
    }
    Ok((Tensor::matrix(m, n, lo), Tensor::matrix(m, n, hi)))
}

/// Exact elementwise product range: min/max over the four endpoint products.
pub(crate) fn hadamard_on<B: Backend>(b: &B, d: &Iv<B::Value>, g: &Iv<B::Value>) -> Result<Iv<B::Value>> {
    let p1 = b.mul(&d.lo, &g.lo)?;
    let p2 = b.mul(&d.lo, &g.hi)?;
    let p3 = b.mul(&d.hi, &g.lo)?;
    let p4 = b.mul(&d.hi, &g.hi)?;
    let lo = b.min(&b.min(&p1, &p2)?, &b.min(&p3, &p4)?)?;
    let hi = b.max(&b.max(&p1, &p2)?, &b.max(&p3, &p4)?)?;
    Ok(Iv { lo, hi })
}

pub(crate) fn activation_on<B: Backend>(b: &B, act: Activation, z: &Iv<B::Value>) -> Iv<B::Value> {
    Iv {
        lo: act.apply_on(b, &z.lo),
        hi: act.apply_on(b, &z.hi),
    }
}

/// Sound bounds on `σ'` over `[lo, hi]`; `None` for the identity.
pub(crate) fn derivative_bounds_on<B: Backend>(b: &B, act: Activation, z: &Iv<B::Value>) -> Result<Option<Iv<B::Value>>> {
    Ok(match act {
        Activation::Identity => None,
        Activation::Relu => Some(Iv {
            lo: b.unary(Unary::Heaviside, &z.lo),
            hi: b.unary(Unary::Heaviside, &z.hi),
        }),
        // σ' = sigmoid is increasing
        Activation::Softplus => Some(Iv {
            lo: b.unary(Unary::Sigmoid, &z.lo),
            hi: b.unary(Unary::Sigmoid, &z.hi),
        }),
        // unimodal derivatives peaking at 0
        Activation::Sigmoid | Activation::Tanh => {
            let peak = if act == Activation::Sigmoid { 0.25 } else { 1.0 };
            let fl = act.derivative_on(b, &z.lo)?.expect("non-identity");
            let fu = act.derivative_on(b, &z.hi)?.expect("non-identity");
            let straddle = b.read(&z.lo, |lo| {
                b.read(&z.hi, |hi| {
                    lo.zip_with(hi, "straddle", |l, u| if l <= 0.0 && u >= 0.0 { peak } else { 0.0 })
                })
            })?;
            let lo = b.min(&fl, &fu)?;
            let hi = b.max(&b.max(&fl, &fu)?, &b.constant(straddle))?;
            Some(Iv { lo, hi })
        }
    })
}

fn onehot_matrix(losses: &[LossKind], classes: usize) -> Tensor {
    let batch = losses.len();
    let mut t = Tensor::zeros(vec![classes, batch]);
    for (j, loss) in losses.iter().enumerate() {
        if let LossKind::CrossEntropy(c) | LossKind::ClassLogit(c) = loss {
            t.data_mut()[c * batch + j] = 1.0;
        }
    }
    t
}

/// Bounds on `∂L/∂z` at the logits over a logit box, one column per example.
pub(crate) fn seed_bounds_on<B: Backend>(
    b: &B,
    losses: &[LossKind],
    z: &Iv<B::Value>,
    classes: usize,
) -> Result<Iv<B::Value>> {
    for loss in losses {
        check_loss(loss, classes)?;
    }
    let same_kind = losses
        .windows(2)
        .all(|w| core::mem::discriminant(&w[0]) == core::mem::discriminant(&w[1]));
    if !same_kind {
        return Err(Error::contract("a batch must use a single loss kind"));
    }
    match losses.first() {
        None => Err(Error::contract("empty batch")),
        Some(LossKind::CrossEntropy(_)) => {
            let y = b.constant(onehot_matrix(losses, classes));
            let lo = b.sub(&b.softmax_bound(&z.lo, &z.hi, false)?, &y)?;
            let hi = b.sub(&b.softmax_bound(&z.lo, &z.hi, true)?, &y)?;
            Ok(Iv { lo, hi })
        }
        Some(LossKind::ClassLogit(_)) => {
            let y = b.constant(onehot_matrix(losses, classes));
            Ok(Iv { lo: y.clone(), hi: y })
        }
        Some(LossKind::SquaredError(_)) => {
            let y = b.constant(targets_matrix(losses, classes));
            Ok(Iv {
                lo: b.scale(&b.sub(&z.lo, &y)?, 2.0),
                hi: b.scale(&b.sub(&z.hi, &y)?, 2.0),
            })
        }
    }
}

fn plain_iv(m: &IntervalMatrix) -> Iv<Tensor> {
    Iv {
        lo: m.lower.clone(),
        hi: m.upper.clone(),
    }
}

fn from_iv(iv: Iv<Tensor>) -> IntervalMatrix {
    IntervalMatrix::from_parts_unchecked(iv.lo, iv.hi)
}

/// Closed-form interval matrix product (center/radius enclosure).
pub fn interval_matmul(a: &IntervalMatrix, x: &IntervalMatrix) -> Result<IntervalMatrix> {
    let a = to_center_radius(&Plain, &plain_iv(a))?;
    let x = to_center_radius(&Plain, &plain_iv(x))?;
    lemma_on(&Plain, &a, &x).map(from_iv)
}

/// Elementwise-tight interval matrix product by corner enumeration per term.
pub fn interval_matmul_exact_corners(a: &IntervalMatrix, x: &IntervalMatrix) -> Result<IntervalMatrix> {
    let (lo, hi) = corner_product(&a.lower, &a.upper, &x.lower, &x.upper)?;
    Ok(IntervalMatrix::from_parts_unchecked(lo, hi))
}

/// Exact range of the elementwise product of two interval matrices.
pub fn interval_hadamard(d: &IntervalMatrix, g: &IntervalMatrix) -> Result<IntervalMatrix> {
    hadamard_on(&Plain, &plain_iv(d), &plain_iv(g)).map(from_iv)
}

/// `[σ(lo), σ(hi)]` for a monotone activation.
pub fn activation_bounds(act: Activation, z: &IntervalMatrix) -> IntervalMatrix {
    from_iv(activation_on(&Plain, act, &plain_iv(z)))
}

/// Sound elementwise bounds on the activation derivative over `z`.
pub fn activation_derivative_bounds(act: Activation, z: &IntervalMatrix) -> Result<IntervalMatrix> {
    match derivative_bounds_on(&Plain, act, &plain_iv(z))? {
        Some(iv) => Ok(from_iv(iv)),
        None => Ok(IntervalMatrix::point(Tensor::full(z.shape().to_vec(), 1.0))),
    }
}

/// Bounds `[σ_min, σ_max]` on the softmax probability of `class` over a
/// logit box given as a single column (or flat vector).
pub fn softmax_bounds(logits: &IntervalMatrix, class: usize) -> Result<(f64, f64)> {
    let n = logits.lower.len();
    if class >= n {
        return Err(Error::contract(format!("class {class} out of range for {n} logits")));
    }
    let lo = logits.lower.clone().reshape(vec![n, 1])?;
    let hi = logits.upper.clone().reshape(vec![n, 1])?;
    let smin = Tensor::softmax_bound(&lo, &hi, false)?;
    let smax = Tensor::softmax_bound(&lo, &hi, true)?;
    Ok((smin.data()[class], smax.data()[class]))
}

/// Bounds on the loss gradient at the logits for a single example.
pub fn loss_gradient_seed_bounds(loss: &LossKind, output: &IntervalMatrix) -> Result<IntervalMatrix> {
    let n = output.lower.len();
    let column = Iv {
        lo: output.lower.clone().reshape(vec![n, 1])?,
        hi: output.upper.clone().reshape(vec![n, 1])?,
    };
    seed_bounds_on(&Plain, core::slice::from_ref(loss), &column, n).map(from_iv)
}

/// Admissible input perturbations: `[x - ε, x + ε]`, optionally intersected
/// with a feature domain `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputRegion {
    center: Tensor,
    epsilon: Tensor,
    domain: Option<(Tensor, Tensor)>,
}

impl InputRegion {
    pub fn new(center: Tensor, epsilon: Tensor) -> Result<Self> {
        if center.shape() != epsilon.shape() {
            return Err(Error::dim("input region", center.shape(), epsilon.shape()));
        }
        if epsilon.data().iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::contract("input region widths must be non-negative"));
        }
        Ok(Self {
            center,
            epsilon,
            domain: None,
        })
    }

    /// Same width `eps` on every feature.
    pub fn uniform(center: Tensor, eps: f64) -> Result<Self> {
        let epsilon = Tensor::full(center.shape().to_vec(), eps);
        Self::new(center, epsilon)
    }

    pub fn with_domain(mut self, lo: Tensor, hi: Tensor) -> Result<Self> {
        if lo.shape() != self.center.shape() || hi.shape() != self.center.shape() {
            return Err(Error::dim("input domain", lo.shape(), self.center.shape()));
        }
        self.domain = Some((lo, hi));
        Ok(self)
    }

    pub fn with_uniform_domain(self, lo: f64, hi: f64) -> Result<Self> {
        let shape = self.center.shape().to_vec();
        self.with_domain(Tensor::full(shape.clone(), lo), Tensor::full(shape, hi))
    }

    pub fn center(&self) -> &Tensor {
        &self.center
    }

    pub fn epsilon(&self) -> &Tensor {
        &self.epsilon
    }

    pub fn domain(&self) -> Option<&(Tensor, Tensor)> {
        self.domain.as_ref()
    }

    /// The realised box; fails when clipping to the domain empties it.
    pub fn bounds(&self) -> Result<IntervalMatrix> {
        let mut lo = self.center.sub(&self.epsilon)?;
        let mut hi = self.center.add(&self.epsilon)?;
        if let Some((dlo, dhi)) = &self.domain {
            lo = lo.maximum(dlo)?;
            hi = hi.minimum(dhi)?;
        }
        IntervalMatrix::new(lo, hi).map_err(|_| Error::contract("input region is empty after clipping to the domain"))
    }

    /// Clamps `x` into the region.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.bounds()?;
        x.maximum(b.lower())?.minimum(b.upper())
    }

    pub fn is_point(&self) -> bool {
        self.bounds().map(|b| b.lower() == b.upper()).unwrap_or(false)
    }
}

/// Admissible parameter perturbations: each parameter `w` ranges over
/// `[w - γ|w|, w + γ|w|]`, with `γ` given per affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelRegion {
    gammas: Vec<f64>,
    uniform: bool,
}

impl ModelRegion {
    pub fn uniform(gamma: f64) -> Self {
        Self {
            gammas: vec![gamma.max(0.0)],
            uniform: true,
        }
    }

    /// One γ per affine layer, in layer order (flatten layers excluded).
    pub fn per_layer(gammas: Vec<f64>) -> Result<Self> {
        if gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::contract("model region γ must be non-negative"));
        }
        Ok(Self { gammas, uniform: false })
    }

    pub fn none() -> Self {
        Self::uniform(0.0)
    }

    /// γ for the `affine_index`-th affine layer.
    pub fn gamma(&self, affine_index: usize) -> f64 {
        if self.uniform {
            self.gammas[0]
        } else {
            self.gammas.get(affine_index).copied().unwrap_or(0.0)
        }
    }

    pub fn is_point(&self) -> bool {
        self.gammas.iter().all(|g| *g == 0.0)
    }

    /// `[w - γ|w|, w + γ|w|]`.
    pub fn parameter_interval(w: &Tensor, gamma: f64) -> IntervalMatrix {
        let r = w.abs().scale(gamma);
        IntervalMatrix::from_parts_unchecked(w.sub(&r).expect("same shape"), w.add(&r).expect("same shape"))
    }
}

/// Reachable-explanation box `[v^L, v^U]` with fragility `delta = v^U - v^L`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBox {
    pub lower: Tensor,
    pub upper: Tensor,
    pub delta: Tensor,
}

impl GradientBox {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        let iv = IntervalMatrix::new(lower, upper)?;
        let delta = iv.width();
        let (lower, upper) = iv.into_parts();
        Ok(Self { lower, upper, delta })
    }

    pub fn point(v: Tensor) -> Self {
        let delta = Tensor::zeros_like(&v);
        Self {
            lower: v.clone(),
            upper: v,
            delta,
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, v: &Tensor, slack: f64) -> bool {
        v.len() == self.lower.len()
            && v
                .data()
                .iter()
                .zip(self.lower.data().iter().zip(self.upper.data()))
                .all(|(&x, (&l, &u))| x >= l - slack && x <= u + slack)
    }

    pub fn is_subset_of(&self, other: &GradientBox, slack: f64) -> bool {
        self.lower
            .data()
            .iter()
            .zip(self.upper.data())
            .zip(other.lower.data().iter().zip(other.upper.data()))
            .all(|((&l, &u), (&ol, &ou))| l >= ol - slack && u <= ou + slack)
    }

    pub fn center(&self) -> Tensor {
        self.lower.zip_with(&self.upper, "center", |l, u| 0.5 * (l + u)).expect("same shape")
    }

    /// Total fragility `Σ δ_i`.
    pub fn total_delta(&self) -> f64 {
        self.delta.sum()
    }

    /// The box scaled by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lower: self.lower.scale(c),
            upper: self.upper.scale(c),
            delta: self.delta.scale(c),
        }
    }
}
