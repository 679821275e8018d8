//! First-order adversaries on explanations: sign-PGD over an input box or a
//! parameter box, with the objective gradient taken either by central finite
//! differences or exactly by differentiating the unrolled gradient computation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::certify::{Similarity, TargetSpec};
use crate::error::{Error, Result};
use crate::interval::{InputRegion, ModelRegion};
use crate::network::{backprop_on, forward_on, seed_on, Affine, LossKind, Network};
use crate::tensor::{Binary, Tensor, Unary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMode {
    TargetedInput,
    UntargetedInput,
    TargetedModel,
    UntargetedModel,
}

impl AttackMode {
    pub fn is_targeted(self) -> bool {
        matches!(self, AttackMode::TargetedInput | AttackMode::TargetedModel)
    }

    pub fn is_model(self) -> bool {
        matches!(self, AttackMode::TargetedModel | AttackMode::UntargetedModel)
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackMode::TargetedInput => "targeted-input",
            AttackMode::UntargetedInput => "untargeted-input",
            AttackMode::TargetedModel => "targeted-model",
            AttackMode::UntargetedModel => "untargeted-model",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            AttackMode::TargetedInput,
            AttackMode::UntargetedInput,
            AttackMode::TargetedModel,
            AttackMode::UntargetedModel,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientEstimator {
    /// Central differences of the scalar objective, one coordinate at a time.
    CentralFiniteDifference(f64),
    /// Exact gradient through a recorded, unrolled input-gradient computation.
    DoubleBackward,
}

/// Per-coordinate PGD step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// Fixed step in every coordinate.
    Absolute(f64),
    /// Multiple of each coordinate's region radius.
    Relative(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub steps: usize,
    pub step_size: StepSize,
    /// Random starts in addition to the clean start.
    pub restarts: usize,
    pub gradient_estimator: GradientEstimator,
    pub seed: u64,
}

impl AttackConfig {
    /// 100 steps of `2.5 r / steps`, one random restart, finite differences.
    pub fn new(mode: AttackMode) -> Self {
        let steps = 100;
        AttackConfig {
            mode,
            steps,
            step_size: StepSize::Relative(2.5 / steps as f64),
            restarts: 1,
            gradient_estimator: GradientEstimator::CentralFiniteDifference(1e-4),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::contract("attack needs at least one step"));
        }
        let s = match self.step_size {
            StepSize::Absolute(s) | StepSize::Relative(s) => s,
        };
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::contract(format!("step size must be positive, got {s}")));
        }
        if let GradientEstimator::CentralFiniteDifference(h) = self.gradient_estimator {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Best point found by an attack.
#[derive(Clone, Debug, PartialEq)]
pub enum AdversarialPoint {
    Input(Tensor),
    Model(Network),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub point: AdversarialPoint,
    pub v_adv: Tensor,
    /// Objective (to be minimized) at every iterate, clean start first.
    pub trace: Vec<f64>,
    pub objective: f64,
    /// `h` between the adversarial explanation and the reference (target or clean).
    pub distance: f64,
    pub success: bool,
}

/// What the attack compares explanations against.
#[derive(Clone, Debug)]
pub enum AttackGoal<'a> {
    /// Reach the target within its threshold.
    Targeted(&'a TargetSpec),
    /// Move farther than `tau` from the clean explanation.
    Untargeted { tau: f64, similarity: Similarity, scale: f64 },
}

impl AttackGoal<'_> {
    pub fn untargeted(tau: f64) -> Self {
        AttackGoal::Untargeted { tau, similarity: Similarity::Mse, scale: 1.0 }
    }

    fn scale(&self) -> f64 {
        match self {
            AttackGoal::Targeted(spec) => spec.scale,
            AttackGoal::Untargeted { scale, .. } => *scale,
        }
    }

    fn similarity(&self) -> Similarity {
        match self {
            AttackGoal::Targeted(spec) => spec.similarity,
            AttackGoal::Untargeted { similarity, .. } => *similarity,
        }
    }
}

/// Scalar objective over explanations, minimized by the attack.
struct Objective {
    reference: Tensor,
    targeted: bool,
    similarity: Similarity,
    scale: f64,
    tau: f64,
}

impl Objective {
    fn new(goal: &AttackGoal<'_>, clean: &Tensor) -> Result<Self> {
        let (reference, targeted, tau) = match goal {
            AttackGoal::Targeted(spec) => (spec.v_targ.clone(), true, spec.tau),
            AttackGoal::Untargeted { tau, .. } => (clean.scale(goal.scale()), false, *tau),
        };
        if reference.len() != clean.len() {
            return Err(Error::dim("attack target", reference.shape(), clean.shape()));
        }
        let reference = reference.reshape(clean.shape().to_vec())?;
        Ok(Objective { reference, targeted, similarity: goal.similarity(), scale: goal.scale(), tau })
    }

    fn distance(&self, v: &Tensor) -> Result<f64> {
        self.similarity.distance(&v.scale(self.scale), &self.reference)
    }

    fn value(&self, v: &Tensor) -> Result<f64> {
        let d = self.distance(v)?;
        Ok(if self.targeted { d } else { -d })
    }

    fn success(&self, distance: f64) -> bool {
        if self.targeted {
            distance <= self.tau
        } else {
            distance > self.tau
        }
    }

    /// Recorded objective for a `[n, 1]` explanation column, up to an additive constant.
    fn on_graph(&self, g: &Graph, v: Var) -> Result<Var> {
        let n = self.reference.len();
        let r = g.constant(self.reference.clone().reshape(vec![n, 1])?);
        let sv = g.unary(Unary::Scale(self.scale), v);
        let d = match self.similarity {
            Similarity::Mse => {
                let diff = g.binary(Binary::Sub, sv, r)?;
                let sq = g.binary(Binary::Mul, diff, diff)?;
                g.unary(Unary::Scale(1.0 / n as f64), g.sum(sq))
            }
            Similarity::Cosine => {
                // -<v, r> / (|v| |r|)
                let dot = g.sum(g.binary(Binary::Mul, sv, r)?);
                let vv = g.sum(g.binary(Binary::Mul, sv, sv)?);
                let norm = g.unary(Unary::Exp, g.unary(Unary::Scale(0.5), g.unary(Unary::Log, vv)));
                let cos = g.binary(Binary::Div, dot, norm)?;
                let rn = self.reference.l2_norm();
                g.unary(Unary::Scale(-1.0 / rn), cos)
            }
        };
        Ok(if self.targeted { d } else { g.unary(Unary::Negate, d) })
    }
}

/// Box `[lo, hi]` an attack iterates in.
struct SearchBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    step: Vec<f64>,
}

impl SearchBox {
    fn project(&self, x: &mut [f64]) {
        for ((v, &l), &h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.max(l).min(h);
        }
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l })
            .collect()
    }

    fn is_degenerate(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| l == h)
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h)
    }
}

/// Sign-PGD driver shared by input and model attacks.
fn run_pgd(
    search: &SearchBox,
    clean: &[f64],
    cfg: &AttackConfig,
    objective: &mut dyn FnMut(&[f64]) -> Result<f64>,
    gradient: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = clean.to_vec();
    let mut best_value = objective(clean)?;
    let mut trace = vec![best_value];
    if search.is_degenerate() {
        return Ok((best, best_value, trace));
    }
    for restart in 0..=cfg.restarts {
        let mut x = if restart == 0 { clean.to_vec() } else { search.random_point(&mut rng) };
        if restart > 0 {
            let v = objective(&x)?;
            trace.push(v);
            if v < best_value {
                best_value = v;
                best.clone_from(&x);
            }
        }
        for _ in 0..cfg.steps {
            let g = gradient(&x)?;
            for ((xi, gi), s) in x.iter_mut().zip(&g).zip(&search.step) {
                *xi -= s * crate::math::sign(*gi);
            }
            search.project(&mut x);
            debug_assert!(search.contains(&x));
            let v = objective(&x)?;
            trace.push(v);
            if v < best_value {
                best_value = v;
                best.clone_from(&x);
            }
        }
    }
    Ok((best, best_value, trace))
}

fn step_sizes(cfg: &AttackConfig, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| match cfg.step_size {
            StepSize::Absolute(s) => s,
            StepSize::Relative(s) => s * 0.5 * (h - l),
        })
        .collect()
}

/// Exact `∂g/∂x` through the recorded input-gradient computation.
fn input_objective_gradient(net: &Network, x: &Tensor, loss: &LossKind, obj: &Objective) -> Result<Tensor> {
    let g = Graph::new();
    let xv = g.param(x.clone());
    let params = net.lift(&g, |g, t| g.constant(t));
    let v = unrolled_gradient(&g, net, &params, xv, loss)?;
    let root = obj.on_graph(&g, v)?;
    let grads = g.backward(root)?;
    Ok(grads.get_or_zeros(xv, x.shape()))
}

/// Input gradient recorded on the graph, as an `[n, 1]` column.
pub(crate) fn unrolled_gradient(
    g: &Graph,
    net: &Network,
    params: &[Option<Affine<Var>>],
    x_column: Var,
    loss: &LossKind,
) -> Result<Var> {
    let traces = forward_on(g, net, params, &x_column)?;
    let logits = traces.last().map_or(x_column, |t| t.post);
    let seed = seed_on(g, &logits, core::slice::from_ref(loss), net.classes())?;
    backprop_on(g, net, params, &traces, seed)
}

/// PGD over the input box `region`.
pub fn input_attack(
    net: &Network,
    x: &Tensor,
    region: &InputRegion,
    loss: &LossKind,
    goal: &AttackGoal<'_>,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if cfg.mode.is_model() || cfg.mode.is_targeted() != matches!(goal, AttackGoal::Targeted(_)) {
        return Err(Error::contract(format!("attack mode {} does not match an input attack with this goal", cfg.mode.name())));
    }
    let n = net.input_len();
    let x_col = net.input_column(x)?;
    let bounds = region.bounds()?;
    if bounds.lower().len() != n {
        return Err(Error::dim("input_attack region", bounds.shape(), net.input_shape()));
    }
    let lo = bounds.lower().data().to_vec();
    let hi = bounds.upper().data().to_vec();
    let step = step_sizes(cfg, &lo, &hi);
    let search = SearchBox { lo, hi, step };
    let clean_v = net.input_gradient(&x_col, loss)?;
    let obj = Objective::new(goal, &clean_v)?;
    let column = |d: &[f64]| Tensor::matrix(n, 1, d.to_vec());

    let mut objective = |d: &[f64]| obj.value(&net.input_gradient(&column(d), loss)?);
    let mut gradient = |d: &[f64]| -> Result<Vec<f64>> {
        match cfg.gradient_estimator {
            GradientEstimator::DoubleBackward => Ok(input_objective_gradient(net, &column(d), loss, &obj)?.into_data()),
            GradientEstimator::CentralFiniteDifference(h) => {
                // all 2n probes in one batch: columns x + h e_i then x - h e_i
                let mut probes = Tensor::zeros(vec![n, 2 * n]);
                let data = probes.data_mut();
                for i in 0..n {
                    for (j, &xi) in d.iter().enumerate() {
                        data[j * 2 * n + i] = xi;
                        data[j * 2 * n + n + i] = xi;
                    }
                    data[i * 2 * n + i] += h;
                    data[i * 2 * n + n + i] -= h;
                }
                let losses = vec![loss.clone(); 2 * n];
                let grads = net.input_gradient_batch(&probes, &losses)?;
                (0..n)
                    .map(|i| {
                        let up = obj.value(&Tensor::matrix(n, 1, grads.column_values(i)))?;
                        let down = obj.value(&Tensor::matrix(n, 1, grads.column_values(n + i)))?;
                        Ok((up - down) / (2.0 * h))
                    })
                    .collect()
            }
        }
    };
    let (best, objective_value, trace) = run_pgd(&search, x_col.data(), cfg, &mut objective, &mut gradient)?;
    let x_adv = Tensor::new(x.shape().to_vec(), best)?;
    let v_adv = net.input_gradient(&x_adv, loss)?;
    let distance = obj.distance(&v_adv.clone().reshape(clean_v.shape().to_vec())?)?;
    Ok(AttackResult {
        point: AdversarialPoint::Input(x_adv),
        v_adv,
        trace,
        objective: objective_value,
        distance,
        success: obj.success(distance),
    })
}

fn flatten_parameters(net: &Network) -> Vec<f64> {
    net.parameters().iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn with_parameters(net: &Network, flat: &[f64]) -> Network {
    let mut out = net.clone();
    let mut offset = 0;
    for p in out.parameters_mut() {
        let len = p.len();
        p.data_mut().copy_from_slice(&flat[offset..offset + len]);
        offset += len;
    }
    out
}

/// PGD over the parameter box `[θ - γ|θ|, θ + γ|θ|]` with `x` fixed.
pub fn model_attack(
    net: &Network,
    x: &Tensor,
    region: &ModelRegion,
    loss: &LossKind,
    goal: &AttackGoal<'_>,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if !cfg.mode.is_model() || cfg.mode.is_targeted() != matches!(goal, AttackGoal::Targeted(_)) {
        return Err(Error::contract(format!("attack mode {} does not match a model attack with this goal", cfg.mode.name())));
    }
    let x_col = net.input_column(x)?;
    let theta = flatten_parameters(net);
    let mut lo = Vec::with_capacity(theta.len());
    let mut hi = Vec::with_capacity(theta.len());
    let mut affine = 0;
    for layer in net.layers() {
        let (Some(w), Some(b)) = (layer.weight(), layer.bias()) else { continue };
        let gamma = region.gamma(affine);
        affine += 1;
        for &v in w.data().iter().chain(b.data()) {
            lo.push(v - gamma * v.abs());
            hi.push(v + gamma * v.abs());
        }
    }
    let step = step_sizes(cfg, &lo, &hi);
    let search = SearchBox { lo, hi, step };
    let clean_v = net.input_gradient(&x_col, loss)?;
    let obj = Objective::new(goal, &clean_v)?;

    let mut objective = |t: &[f64]| obj.value(&with_parameters(net, t).input_gradient(&x_col, loss)?);
    let mut gradient = |t: &[f64]| -> Result<Vec<f64>> {
        let candidate = with_parameters(net, t);
        match cfg.gradient_estimator {
            GradientEstimator::DoubleBackward => {
                let g = Graph::new();
                let params = candidate.lift(&g, |g, t| g.param(t));
                let xv = g.constant(x_col.clone());
                let v = unrolled_gradient(&g, &candidate, &params, xv, loss)?;
                let root = obj.on_graph(&g, v)?;
                let grads = g.backward(root)?;
                let mut out = Vec::with_capacity(t.len());
                for p in params.iter().flatten() {
                    for var in [p.weight, p.bias] {
                        let shape = g.with_value(var, |t| t.shape().to_vec());
                        out.extend_from_slice(grads.get_or_zeros(var, &shape).data());
                    }
                }
                Ok(out)
            }
            GradientEstimator::CentralFiniteDifference(h) => {
                let mut probe = t.to_vec();
                let mut out = Vec::with_capacity(t.len());
                for i in 0..t.len() {
                    let orig = probe[i];
                    probe[i] = orig + h;
                    let up = obj.value(&with_parameters(net, &probe).input_gradient(&x_col, loss)?)?;
                    probe[i] = orig - h;
                    let down = obj.value(&with_parameters(net, &probe).input_gradient(&x_col, loss)?)?;
                    probe[i] = orig;
                    out.push((up - down) / (2.0 * h));
                }
                Ok(out)
            }
        }
    };
    let (best, objective_value, trace) = run_pgd(&search, &theta, cfg, &mut objective, &mut gradient)?;
    let adv = with_parameters(net, &best);
    let v_adv = adv.input_gradient(x, loss)?;
    let distance = obj.distance(&v_adv.clone().reshape(clean_v.shape().to_vec())?)?;
    Ok(AttackResult {
        point: AdversarialPoint::Model(adv),
        v_adv,
        trace,
        objective: objective_value,
        distance,
        success: obj.success(distance),
    })
}
