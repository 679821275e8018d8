//! Minibatch training with the certified explanation-robustness regularizer
//! and the gradient-regularization baselines.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::bounds::{explanation_bounds_batch, explanation_bounds_on, BoundMethod};
use crate::data::{minibatches, Dataset};
use crate::error::{Error, Result};
use crate::interval::{Iv, ModelRegion};
use crate::network::{backprop_on, forward_on, seed_on, Affine, LossKind, Network};
use crate::tensor::{Binary, Tensor, Unary};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    None,
    /// `L + α Σδ` with bounds over an `ε`-input box and a `γ`-parameter box.
    GradCert { alpha: f64, epsilon: f64, gamma: f64 },
    /// `L + α ‖∇ₓL(x')‖²` at a Gaussian-perturbed input.
    L2Noise { alpha: f64, epsilon: f64 },
    /// `L + α max_{x'} ‖∇ₓL(x) - ∇ₓL(x')‖₁`.
    GNorm { alpha: f64, epsilon: f64, inner_steps: usize },
    /// `max_{x'} [L(x') + α ‖∇ₓL(x) - ∇ₓL(x')‖₁]`.
    GSumNorm { alpha: f64, epsilon: f64, inner_steps: usize },
    /// `max_{x'} L(x')`.
    PgdAdv { epsilon: f64, inner_steps: usize },
}

impl Regularizer {
    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::GradCert { .. } => "grad-cert",
            Regularizer::L2Noise { .. } => "l2-noise",
            Regularizer::GNorm { .. } => "g-norm",
            Regularizer::GSumNorm { .. } => "g-sum-norm",
            Regularizer::PgdAdv { .. } => "pgd-adv",
        }
    }

    fn validate(&self) -> Result<()> {
        let (alpha, eps, gamma) = match *self {
            Regularizer::None => return Ok(()),
            Regularizer::GradCert { alpha, epsilon, gamma } => (alpha, epsilon, gamma),
            Regularizer::L2Noise { alpha, epsilon }
            | Regularizer::GNorm { alpha, epsilon, .. }
            | Regularizer::GSumNorm { alpha, epsilon, .. } => (alpha, epsilon, 0.0),
            Regularizer::PgdAdv { epsilon, .. } => (0.0, epsilon, 0.0),
        };
        for (name, v) in [("alpha", alpha), ("epsilon", eps), ("gamma", gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{} {name} must be a finite non-negative number, got {v}", self.name())));
            }
        }
        Ok(())
    }

    /// The same regularizer with its radii multiplied by `r`.
    fn ramped(&self, r: f64) -> Regularizer {
        match *self {
            Regularizer::None => Regularizer::None,
            Regularizer::GradCert { alpha, epsilon, gamma } => Regularizer::GradCert { alpha, epsilon: epsilon * r, gamma: gamma * r },
            Regularizer::L2Noise { alpha, epsilon } => Regularizer::L2Noise { alpha, epsilon: epsilon * r },
            Regularizer::GNorm { alpha, epsilon, inner_steps } => Regularizer::GNorm { alpha, epsilon: epsilon * r, inner_steps },
            Regularizer::GSumNorm { alpha, epsilon, inner_steps } => Regularizer::GSumNorm { alpha, epsilon: epsilon * r, inner_steps },
            Regularizer::PgdAdv { epsilon, inner_steps } => Regularizer::PgdAdv { epsilon: epsilon * r, inner_steps },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

/// Schedule of the regularizer radii.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ramp {
    None,
    /// Radii stay at 0 for the first `warmup` fraction of training, then grow
    /// linearly to full size over the next `length` fraction.
    Linear { warmup: f64, length: f64 },
}

impl Default for Ramp {
    fn default() -> Self {
        Ramp::Linear { warmup: 0.0, length: 0.5 }
    }
}

impl Ramp {
    fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            Ramp::None => 1.0,
            Ramp::Linear { warmup, length } => {
                let start = warmup * total as f64;
                let span = length * total as f64;
                let s = step as f64;
                if s < start {
                    0.0
                } else if span <= 0.0 {
                    1.0
                } else {
                    ((s - start) / span).min(1.0)
                }
            }
        }
    }
}

/// Held-out examples on which mean `Σδ` is tracked per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub count: usize,
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for Probe {
    fn default() -> Self {
        Probe { count: 100, epsilon: 0.01, gamma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub ramp: Ramp,
    pub seed: u64,
    pub probe: Probe,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regularizer: Regularizer::None,
            optimizer: Optimizer::default(),
            epochs: 10,
            batch_size: 64,
            ramp: Ramp::default(),
            seed: 0,
            probe: Probe::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.regularizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch size must be positive"));
        }
        if let Ramp::Linear { warmup, length } = self.ramp {
            if !(length > 0.0 && warmup >= 0.0 && warmup + length <= 1.0) {
                return Err(Error::contract(format!("ramp warmup {warmup} and length {length} must fit in (0, 1]")));
            }
        }
        let lr = match self.optimizer {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean task loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean regularizer value over the epoch's batches.
    pub regularizer: f64,
    pub test_accuracy: f64,
    /// Mean `Σδ` over the probe examples.
    pub probe_delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

/// Loss of one batch with gradients for every parameter (in
/// [`Network::parameters`] order).
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub total: f64,
    pub task: f64,
    pub regularizer: f64,
    pub gradients: Vec<Tensor>,
}

/// One training batch: `[n, B]` inputs, labels and the feature domain.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

impl<'a> Batch<'a> {
    pub fn from_dataset(ds: &'a Dataset, indices: &[usize]) -> Self {
        Batch { inputs: ds.columns(indices), labels: ds.labels_of(indices), lower: &ds.feature_lower, upper: &ds.feature_upper }
    }

    fn losses(&self) -> Vec<LossKind> {
        self.labels.iter().map(|&y| LossKind::CrossEntropy(y)).collect()
    }

    /// `[x - eps, x + eps]` clipped to the domain, per column.
    fn input_box(&self, eps: f64) -> (Tensor, Tensor) {
        let b = self.inputs.cols();
        let mut lo = self.inputs.clone();
        let mut hi = self.inputs.clone();
        for (k, (l, h)) in lo.data_mut().iter_mut().zip(hi.data_mut().iter_mut()).enumerate() {
            let f = k / b.max(1);
            *l = (*l - eps).max(self.lower[f]);
            *h = (*h + eps).min(self.upper[f]);
        }
        (lo, hi)
    }

    fn clip(&self, x: &mut Tensor, lo: &Tensor, hi: &Tensor) {
        for ((v, &l), &h) in x.data_mut().iter_mut().zip(lo.data()).zip(hi.data()) {
            *v = v.max(l).min(h);
        }
    }

    fn random_in<R: Rng + ?Sized>(lo: &Tensor, hi: &Tensor, rng: &mut R) -> Tensor {
        let data = lo.data().iter().zip(hi.data()).map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l }).collect();
        Tensor::new(lo.shape().to_vec(), data).expect("same shape")
    }
}

fn collect_gradients(g: &Graph, params: &[Option<Affine<Var>>], root: Var) -> Result<Vec<Tensor>> {
    let grads = g.backward(root)?;
    let mut out = Vec::new();
    for p in params.iter().flatten() {
        for var in [p.weight, p.bias] {
            let shape = g.with_value(var, |t| t.shape().to_vec());
            out.push(grads.get_or_zeros(var, &shape));
        }
    }
    Ok(out)
}

/// Mean over the batch of `Σδ` with gradients; the graph records the full
/// bound computation so `∂D/∂θ` is exact for the closed-form bounds.
fn grad_cert_term(g: &Graph, net: &Network, params: &[Option<Affine<Var>>], batch: &Batch<'_>, eps: f64, gamma: f64) -> Result<Var> {
    let (lo, hi) = batch.input_box(eps);
    let iv = Iv { lo: g.constant(lo), hi: g.constant(hi) };
    let d = explanation_bounds_on(g, net, params, iv, &ModelRegion::uniform(gamma), &batch.losses(), BoundMethod::ClosedForm)?;
    let width = g.binary(Binary::Sub, d.hi, d.lo)?;
    Ok(g.unary(Unary::Scale(1.0 / batch.labels.len() as f64), g.sum(width)))
}

/// Per-example input gradients of the task loss recorded on `g`, `[n, B]`.
fn recorded_input_gradients(g: &Graph, net: &Network, params: &[Option<Affine<Var>>], xs: Var, losses: &[LossKind]) -> Result<Var> {
    let traces = forward_on(g, net, params, &xs)?;
    let logits = traces.last().map_or(xs, |t| t.post);
    let seed = seed_on(g, &logits, losses, net.classes())?;
    backprop_on(g, net, params, &traces, seed)
}

/// Sum over columns of `‖a_j - b_j‖₁`.
fn l1_gap(g: &Graph, a: Var, b: Var) -> Result<Var> {
    Ok(g.sum(g.unary(Unary::Abs, g.binary(Binary::Sub, a, b)?)))
}

/// Per-column values of `‖a_j - b_j‖₁`.
fn column_l1(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let cols = a.cols();
    let mut out = vec![0.0; cols];
    for (k, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        out[k % cols] += (x - y).abs();
    }
    out
}

fn per_example_ce(logits: &Tensor, labels: &[usize]) -> Vec<f64> {
    (0..logits.cols())
        .map(|j| crate::network::loss_value(&logits.column_values(j), &LossKind::CrossEntropy(labels[j])).unwrap_or(f64::NAN))
        .collect()
}

/// Inner sign-PGD maximizer shared by the adversarial baselines. `value`
/// returns per-column objectives, `ascent` the objective gradient in `x'`.
fn inner_maximize<R: Rng + ?Sized>(
    batch: &Batch<'_>,
    eps: f64,
    steps: usize,
    rng: &mut R,
    value: &dyn Fn(&Tensor) -> Result<Vec<f64>>,
    ascent: &dyn Fn(&Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let (lo, hi) = batch.input_box(eps);
    let cols = batch.inputs.cols();
    let mut best = batch.inputs.clone();
    let mut best_value = value(&best)?;
    if eps == 0.0 || steps == 0 {
        return Ok(best);
    }
    let step = 2.5 * eps / steps as f64;
    let mut x = Batch::random_in(&lo, &hi, rng);
    for _ in 0..steps {
        let grad = ascent(&x)?;
        for (v, gv) in x.data_mut().iter_mut().zip(grad.data()) {
            *v += step * crate::math::sign(*gv);
        }
        batch.clip(&mut x, &lo, &hi);
        let vals = value(&x)?;
        for j in 0..cols {
            if vals[j] > best_value[j] {
                best_value[j] = vals[j];
                for f in 0..x.rows() {
                    best.data_mut()[f * cols + j] = x.data()[f * cols + j];
                }
            }
        }
    }
    Ok(best)
}

/// Composite training objective of one batch and its parameter gradients.
/// Per-example terms are averaged over the batch.
pub fn composite_loss<R: Rng + ?Sized>(net: &Network, batch: &Batch<'_>, regularizer: &Regularizer, rng: &mut R) -> Result<LossEval> {
    let losses = batch.losses();
    let bsize = batch.labels.len() as f64;
    let constant_params = || {
        let g = Graph::new();
        let p = net.lift(&g, |g, t| g.constant(t));
        (g, p)
    };
    // inner maximization happens with the parameters held fixed
    let adversarial = match *regularizer {
        Regularizer::GNorm { alpha, epsilon, inner_steps } | Regularizer::GSumNorm { alpha, epsilon, inner_steps } => {
            let sum_form = matches!(regularizer, Regularizer::GSumNorm { .. });
            let clean_v = net.input_gradient_batch(&batch.inputs, &losses)?;
            let value = |x: &Tensor| -> Result<Vec<f64>> {
                let v = net.input_gradient_batch(x, &losses)?;
                let gap = column_l1(&clean_v, &v);
                if !sum_form {
                    return Ok(gap);
                }
                let ce = per_example_ce(&net.forward_batch(x)?.logits, &batch.labels);
                Ok(gap.iter().zip(ce).map(|(d, c)| c + alpha * d).collect())
            };
            let ascent = |x: &Tensor| -> Result<Tensor> {
                let (g, params) = constant_params();
                let xv = g.param(x.clone());
                let v = recorded_input_gradients(&g, net, &params, xv, &losses)?;
                let mut obj = l1_gap(&g, g.constant(clean_v.clone()), v)?;
                if sum_form {
                    let traces = forward_on(&g, net, &params, &xv)?;
                    let logits = traces.last().map_or(xv, |t| t.post);
                    let ce = g.unary(Unary::Scale(bsize), g.cross_entropy(logits, &batch.labels)?);
                    obj = g.binary(Binary::Add, g.unary(Unary::Scale(alpha), obj), ce)?;
                }
                Ok(g.backward(obj)?.get_or_zeros(xv, x.shape()))
            };
            Some(inner_maximize(batch, epsilon, inner_steps, rng, &value, &ascent)?)
        }
        Regularizer::PgdAdv { epsilon, inner_steps } => {
            let value = |x: &Tensor| -> Result<Vec<f64>> { Ok(per_example_ce(&net.forward_batch(x)?.logits, &batch.labels)) };
            let ascent = |x: &Tensor| net.input_gradient_batch(x, &losses);
            Some(inner_maximize(batch, epsilon, inner_steps, rng, &value, &ascent)?)
        }
        Regularizer::L2Noise { epsilon, .. } => {
            let mut x = batch.inputs.clone();
            if epsilon > 0.0 {
                let normal = Normal::new(0.0, epsilon).map_err(|e| Error::contract(e.to_string()))?;
                for v in x.data_mut() {
                    *v += normal.sample(rng);
                }
            }
            Some(x)
        }
        _ => None,
    };

    let g = Graph::new();
    let params = net.lift(&g, |g, t| g.param(t));
    let task_at = |x: Var| -> Result<Var> {
        let traces = forward_on(&g, net, &params, &x)?;
        let logits = traces.last().map_or(x, |t| t.post);
        g.cross_entropy(logits, &batch.labels)
    };
    let x = g.constant(batch.inputs.clone());
    let (task, reg, total) = match (*regularizer, adversarial) {
        (Regularizer::GradCert { alpha, epsilon, gamma }, _) if alpha > 0.0 && (epsilon > 0.0 || gamma > 0.0) => {
            let task = task_at(x)?;
            let d = grad_cert_term(&g, net, &params, batch, epsilon, gamma)?;
            (task, Some(d), g.binary(Binary::Add, task, g.unary(Unary::Scale(alpha), d))?)
        }
        (Regularizer::L2Noise { alpha, .. }, Some(xn)) if alpha > 0.0 => {
            let task = task_at(x)?;
            let v = recorded_input_gradients(&g, net, &params, g.constant(xn), &losses)?;
            let sq = g.unary(Unary::Scale(1.0 / bsize), g.sum(g.binary(Binary::Mul, v, v)?));
            (task, Some(sq), g.binary(Binary::Add, task, g.unary(Unary::Scale(alpha), sq))?)
        }
        (Regularizer::GNorm { alpha, .. }, Some(xa)) if alpha > 0.0 => {
            let task = task_at(x)?;
            let v = recorded_input_gradients(&g, net, &params, x, &losses)?;
            let va = recorded_input_gradients(&g, net, &params, g.constant(xa), &losses)?;
            let gap = g.unary(Unary::Scale(1.0 / bsize), l1_gap(&g, v, va)?);
            (task, Some(gap), g.binary(Binary::Add, task, g.unary(Unary::Scale(alpha), gap))?)
        }
        (Regularizer::GSumNorm { alpha, .. }, Some(xa)) => {
            let xa = g.constant(xa);
            let task = task_at(xa)?;
            let v = recorded_input_gradients(&g, net, &params, x, &losses)?;
            let va = recorded_input_gradients(&g, net, &params, xa, &losses)?;
            let gap = g.unary(Unary::Scale(1.0 / bsize), l1_gap(&g, v, va)?);
            (task, Some(gap), g.binary(Binary::Add, task, g.unary(Unary::Scale(alpha), gap))?)
        }
        (Regularizer::PgdAdv { .. }, Some(xa)) => {
            let task = task_at(g.constant(xa))?;
            (task, None, task)
        }
        _ => {
            let task = task_at(x)?;
            (task, None, task)
        }
    };
    let gradients = collect_gradients(&g, &params, total)?;
    Ok(LossEval {
        total: g.scalar(total),
        task: g.scalar(task),
        regularizer: reg.map_or(0.0, |r| g.scalar(r)),
        gradients,
    })
}

/// `Σδ` of the explanation box for one input, with `∂D/∂θ` in
/// [`Network::parameters`] order.
pub fn grad_cert_regularizer(net: &Network, x: &Tensor, epsilon: f64, gamma: f64, loss: &LossKind) -> Result<(f64, Vec<Tensor>)> {
    let col = net.input_column(x)?;
    let g = Graph::new();
    let params = net.lift(&g, |g, t| g.param(t));
    let lower = g.constant(col.map(|v| v - epsilon));
    let upper = g.constant(col.map(|v| v + epsilon));
    let d = explanation_bounds_on(&g, net, &params, Iv { lo: lower, hi: upper }, &ModelRegion::uniform(gamma), core::slice::from_ref(loss), BoundMethod::ClosedForm)?;
    let root = g.sum(g.binary(Binary::Sub, d.hi, d.lo)?);
    let value = g.scalar(root);
    Ok((value, collect_gradients(&g, &params, root)?))
}

/// Parameter update rule with its state.
struct OptimizerState {
    kind: Optimizer,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, net: &Network) -> Self {
        let zeros: Vec<Tensor> = net.parameters().iter().map(|p| Tensor::zeros_like(p)).collect();
        OptimizerState { kind, first: zeros.clone(), second: zeros, t: 0 }
    }

    fn step(&mut self, net: &mut Network, grads: &[Tensor]) {
        self.t += 1;
        for (k, (p, g)) in net.parameters_mut().into_iter().zip(grads).enumerate() {
            match self.kind {
                Optimizer::Sgd { lr, momentum } => {
                    let m = self.first[k].data_mut();
                    for ((w, &gi), mi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *mi = momentum * *mi + gi;
                        *w -= lr * *mi;
                    }
                }
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let c1 = 1.0 - libm::pow(beta1, self.t as f64);
                    let c2 = 1.0 - libm::pow(beta2, self.t as f64);
                    let (m, v) = (self.first[k].data_mut(), self.second[k].data_mut());
                    for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *w -= lr * (*mi / c1) / (crate::math::sqrt(*vi / c2) + eps);
                    }
                }
            }
        }
    }
}

/// Accuracy of `net` on `ds`, evaluated in chunks.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(512) {
        let preds = net.predict_batch(&ds.columns(chunk))?;
        correct += preds.iter().zip(chunk).filter(|(p, &i)| **p == ds.labels[i]).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Mean `Σδ` of the explanation boxes of the first `probe.count` examples.
pub fn mean_probe_delta(net: &Network, ds: &Dataset, probe: &Probe) -> Result<f64> {
    let count = probe.count.min(ds.len());
    if count == 0 {
        return Ok(0.0);
    }
    let idx: Vec<usize> = (0..count).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(64) {
        let batch = Batch::from_dataset(ds, chunk);
        let (lo, hi) = batch.input_box(probe.epsilon);
        let boxes = explanation_bounds_batch(net, &lo, &hi, &ModelRegion::uniform(probe.gamma), &batch.losses(), BoundMethod::ClosedForm)?;
        total += boxes.iter().map(|b| b.total_delta()).sum::<f64>();
    }
    Ok(total / count as f64)
}

/// Minibatch optimization of [`composite_loss`]; deterministic given the seed.
/// `test` (or `train` when absent) supplies accuracy and the probe examples.
pub fn fit(mut net: Network, train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if train.features() != net.input_len() || train.classes > net.classes() {
        return Err(Error::dim("training data", &[train.features(), train.classes], &[net.input_len(), net.classes()]));
    }
    let eval = test.unwrap_or(train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, &net);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut reg_sum, mut batches) = (0.0, 0.0, 0usize);
        for indices in minibatches(train.len(), cfg.batch_size, &mut rng) {
            let batch = Batch::from_dataset(train, &indices);
            let reg = cfg.regularizer.ramped(cfg.ramp.factor(step, total_steps));
            let eval_batch = composite_loss(&net, &batch, &reg, &mut rng)?;
            if !eval_batch.total.is_finite() || eval_batch.gradients.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("loss {} (task {}, regularizer {})", eval_batch.total, eval_batch.task, eval_batch.regularizer),
                });
            }
            opt.step(&mut net, &eval_batch.gradients);
            loss_sum += eval_batch.task;
            reg_sum += eval_batch.regularizer;
            batches += 1;
            step += 1;
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            regularizer: reg_sum / batches as f64,
            test_accuracy: accuracy(&net, eval)?,
            probe_delta: mean_probe_delta(&net, eval, &cfg.probe)?,
        });
    }
    Ok((net, report))
}
