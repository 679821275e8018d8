//! Certification, attack and evaluation pipelines over a test set.

use serde::Serialize;

use gradcert_core::certify::untargeted_norm_ratio;
use gradcert_core::train::accuracy;
use gradcert_core::{
    bias_score, certify_targeted, explanation_bounds_in, fit, input_attack, label_poison, logit_bounds_margin, model_attack,
    AttackGoal, AttackMode, BoundMethod, Dataset, InputRegion, LossKind, ModelRegion, Network, Similarity, TargetSpec, Tensor,
};

use crate::config::ExperimentConfig;
use crate::error::{AppError, AppResult};
use crate::masks::{corner_masks, load_targets, rms, Target};
use crate::par::ordered_map;

/// Recorded in every report: how explanations and targets are scaled before
/// they are compared.
pub const SCALING: &str = "explanations and their bounds are divided by the RMS of the clean explanation; targets are scaled to unit RMS";

/// Which checks to run at a grid point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Checks {
    pub untargeted: bool,
    pub norm_ratio: bool,
    pub targeted: bool,
    pub prediction: bool,
    pub attack_untargeted: bool,
    pub attack_targeted: bool,
}

impl Checks {
    pub fn certificates() -> Self {
        Checks { untargeted: true, norm_ratio: true, targeted: true, prediction: true, ..Checks::default() }
    }

    pub fn all() -> Self {
        Checks { attack_untargeted: true, attack_targeted: true, ..Checks::certificates() }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct InstanceResult {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub total_delta: f64,
    pub untargeted_score: Option<f64>,
    pub untargeted_certified: Option<bool>,
    pub norm_ratio: Option<f64>,
    pub norm_ratio_certified: Option<bool>,
    pub prediction_certified: Option<bool>,
    pub targeted_certified: Option<usize>,
    pub targeted_total: Option<usize>,
    pub attack_distance: Option<f64>,
    pub attack_robust: Option<bool>,
    pub targeted_attacked: Option<usize>,
    pub targeted_broken: Option<usize>,
    /// Certified pairs among the attacked ones.
    pub targeted_attacked_certified: Option<usize>,
    /// Certified instances (or input/target pairs) that an attack broke.
    pub violations: usize,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct PointSummary {
    pub epsilon: f64,
    pub gamma: f64,
    pub inputs: usize,
    pub accuracy: f64,
    pub mean_total_delta: f64,
    pub untargeted_certified_rate: Option<f64>,
    pub norm_ratio_certified_rate: Option<f64>,
    pub targeted_certified_rate: Option<f64>,
    pub prediction_certified_rate: Option<f64>,
    pub untargeted_attack_robustness: Option<f64>,
    /// Over attacked input/target pairs.
    pub targeted_attack_robustness: Option<f64>,
    /// Certified rate restricted to the attacked pairs, comparable with the
    /// attack robustness above.
    pub targeted_certified_rate_attacked: Option<f64>,
    pub violations: usize,
}

/// Everything fixed across grid points.
pub struct Evaluator<'a> {
    pub net: &'a Network,
    pub data: &'a Dataset,
    pub cfg: &'a ExperimentConfig,
    pub indices: Vec<usize>,
    pub targets: Vec<Target>,
    pub similarity: Similarity,
    pub method: BoundMethod,
}

/// Rejects a model whose input or output shape does not fit the data.
pub fn check_compatible(net: &Network, data: &Dataset) -> AppResult<()> {
    if net.input_len() != data.features() || net.input_shape() != data.input_shape.as_slice() {
        return Err(AppError::Contract(format!(
            "model expects input shape {:?} but dataset '{}' has {:?}",
            net.input_shape(),
            data.name,
            data.input_shape
        )));
    }
    if net.classes() != data.classes {
        return Err(AppError::Contract(format!("model has {} outputs but dataset '{}' has {} classes", net.classes(), data.name, data.classes)));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn rate(values: impl Iterator<Item = bool>) -> Option<f64> {
    mean(values.map(|b| f64::from(u8::from(b))))
}

impl<'a> Evaluator<'a> {
    pub fn new(net: &'a Network, data: &'a Dataset, cfg: &'a ExperimentConfig, want_targets: bool) -> AppResult<Self> {
        check_compatible(net, data)?;
        let limit = if cfg.evaluate.limit == 0 { data.len() } else { cfg.evaluate.limit.min(data.len()) };
        let targets = if !want_targets {
            Vec::new()
        } else {
            match cfg.evaluate.targets.as_str() {
                "none" => Vec::new(),
                "corners" if data.input_shape.len() == 3 => corner_masks(&data.input_shape, cfg.evaluate.mask_insets, cfg.evaluate.mask_size)?,
                "corners" => Vec::new(),
                path => load_targets(std::path::Path::new(path), &data.input_shape)?,
            }
        };
        Ok(Evaluator { net, data, cfg, indices: (0..limit).collect(), targets, similarity: cfg.similarity()?, method: cfg.bound_method()? })
    }

    pub fn explanation_loss(&self, label: usize, predicted: usize) -> LossKind {
        match self.cfg.evaluate.explanation.as_str() {
            "predicted-logit" => LossKind::ClassLogit(predicted),
            _ => LossKind::CrossEntropy(label),
        }
    }

    fn attacked(&self, position: usize) -> bool {
        let l = self.cfg.evaluate.attack.limit;
        l == 0 || position < l
    }

    /// One input at one grid point.
    pub fn instance(&self, position: usize, eps: f64, gamma: f64, checks: Checks) -> AppResult<InstanceResult> {
        let i = self.indices[position];
        let x = self.data.example(i);
        let label = self.data.labels[i];
        let predicted = self.net.predict(&x)?;
        let loss = self.explanation_loss(label, predicted);
        let v = self.net.input_gradient(&x, &loss)?;
        let r = rms(&v);
        let scale = if r > 0.0 { 1.0 / r } else { 1.0 };
        let shape = self.data.input_shape.clone();
        let region = InputRegion::uniform(x.clone(), eps)?.with_domain(
            Tensor::new(shape.clone(), self.data.feature_lower.clone())?,
            Tensor::new(shape, self.data.feature_upper.clone())?,
        )?;
        let model = ModelRegion::uniform(gamma);
        let gbox = explanation_bounds_in(self.net, &region, &model, &loss, self.method)?;
        let e = &self.cfg.evaluate;
        let mut out = InstanceResult {
            index: i,
            label,
            predicted,
            total_delta: gbox.total_delta(),
            untargeted_score: None,
            untargeted_certified: None,
            norm_ratio: None,
            norm_ratio_certified: None,
            prediction_certified: None,
            targeted_certified: None,
            targeted_total: None,
            attack_distance: None,
            attack_robust: None,
            targeted_attacked: None,
            targeted_broken: None,
            targeted_attacked_certified: None,
            violations: 0,
        };
        if checks.untargeted || checks.attack_untargeted {
            let c = gradcert_core::certify::certify_untargeted_with(&gbox.scaled(scale), &v.scale(scale), e.tau_untargeted, self.similarity)?;
            if checks.untargeted {
                out.untargeted_score = Some(c.score);
                out.untargeted_certified = Some(c.certified);
            }
            if checks.attack_untargeted && self.attacked(position) {
                let goal = AttackGoal::Untargeted { tau: e.tau_untargeted, similarity: self.similarity, scale };
                let res = if eps > 0.0 || gamma == 0.0 {
                    input_attack(self.net, &x, &region, &loss, &goal, &self.cfg.attack_config(AttackMode::UntargetedInput)?)?
                } else {
                    model_attack(self.net, &x, &model, &loss, &goal, &self.cfg.attack_config(AttackMode::UntargetedModel)?)?
                };
                out.attack_distance = Some(res.distance);
                out.attack_robust = Some(!res.success);
                if c.certified && res.success {
                    out.violations += 1;
                }
            }
        }
        if checks.norm_ratio {
            let ratio = untargeted_norm_ratio(&gbox, &v)?;
            out.norm_ratio = Some(ratio);
            out.norm_ratio_certified = Some(ratio <= e.tau_norm_ratio);
        }
        if checks.prediction {
            out.prediction_certified = Some(logit_bounds_margin(self.net, &region, &model, label)?);
        }
        if (checks.targeted || checks.attack_targeted) && !self.targets.is_empty() {
            let mut certified = Vec::with_capacity(self.targets.len());
            for t in &self.targets {
                let spec = TargetSpec::new(t.tensor.clone(), e.tau_targeted, self.similarity)?.with_scale(scale)?;
                certified.push((spec.clone(), certify_targeted(&gbox, &spec)?.certified));
            }
            if checks.targeted {
                out.targeted_certified = Some(certified.iter().filter(|(_, c)| *c).count());
                out.targeted_total = Some(certified.len());
            }
            if checks.attack_targeted && self.attacked(position) {
                let take = if e.attack.targets == 0 { certified.len() } else { e.attack.targets.min(certified.len()) };
                let mut broken = 0;
                let mut cert_attacked = 0;
                for (spec, cert) in certified.iter().take(take) {
                    let goal = AttackGoal::Targeted(spec);
                    let res = if eps > 0.0 || gamma == 0.0 {
                        input_attack(self.net, &x, &region, &loss, &goal, &self.cfg.attack_config(AttackMode::TargetedInput)?)?
                    } else {
                        model_attack(self.net, &x, &model, &loss, &goal, &self.cfg.attack_config(AttackMode::TargetedModel)?)?
                    };
                    broken += usize::from(res.success);
                    cert_attacked += usize::from(*cert);
                    if *cert && res.success {
                        out.violations += 1;
                    }
                }
                out.targeted_attacked = Some(take);
                out.targeted_attacked_certified = Some(cert_attacked);
                out.targeted_broken = Some(broken);
            }
        }
        Ok(out)
    }

    /// All selected inputs at one grid point, in input order.
    pub fn point(&self, eps: f64, gamma: f64, checks: Checks) -> AppResult<(PointSummary, Vec<InstanceResult>)> {
        let rows = ordered_map(self.indices.len(), |p| self.instance(p, eps, gamma, checks))?;
        Ok((self.summarize(eps, gamma, &rows), rows))
    }

    pub fn summarize(&self, eps: f64, gamma: f64, rows: &[InstanceResult]) -> PointSummary {
        let pairs = |f: fn(&InstanceResult) -> Option<usize>, g: fn(&InstanceResult) -> Option<usize>| {
            let (num, den) = rows.iter().fold((0usize, 0usize), |(a, b), r| (a + f(r).unwrap_or(0), b + g(r).unwrap_or(0)));
            (den > 0).then(|| num as f64 / den as f64)
        };
        let targeted_attack_robustness = pairs(|r| r.targeted_attacked.zip(r.targeted_broken).map(|(a, b)| a - b), |r| r.targeted_attacked);
        let targeted_certified_rate_attacked = pairs(|r| r.targeted_attacked_certified, |r| r.targeted_attacked);
        PointSummary {
            epsilon: eps,
            gamma,
            inputs: rows.len(),
            accuracy: rate(rows.iter().map(|r| r.label == r.predicted)).unwrap_or(0.0),
            mean_total_delta: mean(rows.iter().map(|r| r.total_delta)).unwrap_or(0.0),
            untargeted_certified_rate: rate(rows.iter().filter_map(|r| r.untargeted_certified)),
            norm_ratio_certified_rate: rate(rows.iter().filter_map(|r| r.norm_ratio_certified)),
            targeted_certified_rate: pairs(|r| r.targeted_certified, |r| r.targeted_total),
            prediction_certified_rate: rate(rows.iter().filter_map(|r| r.prediction_certified)),
            untargeted_attack_robustness: rate(rows.iter().filter_map(|r| r.attack_robust)),
            targeted_attack_robustness,
            targeted_certified_rate_attacked,
            violations: rows.iter().map(|r| r.violations).sum(),
        }
    }
}

/// Grid points: each ε with γ = 0, then each γ with ε = 0.
pub fn grid(cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    cfg.evaluate.epsilons.iter().map(|&e| (e, 0.0)).chain(cfg.evaluate.gammas.iter().map(|&g| (0.0, g))).collect()
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BiasPoint {
    pub poison: f64,
    pub accuracy: f64,
    pub mean_bias_score: f64,
}

/// Mean share of explanation mass on the sensitive features.
pub fn mean_bias_score(net: &Network, data: &Dataset, cfg: &ExperimentConfig) -> AppResult<f64> {
    if data.sensitive_indices.is_empty() {
        return Err(AppError::Config(format!("dataset '{}' has no sensitive attribute for a bias sweep", data.name)));
    }
    let ev = Evaluator::new(net, data, cfg, false)?;
    let scores = ordered_map(ev.indices.len(), |p| {
        let i = ev.indices[p];
        let x = data.example(i);
        let loss = ev.explanation_loss(data.labels[i], net.predict(&x)?);
        let v = net.input_gradient(&x, &loss)?;
        let mut s = 0.0;
        for &j in &data.sensitive_indices {
            s += bias_score(&v, j)?;
        }
        Ok(s)
    })?;
    Ok(mean(scores.into_iter()).unwrap_or(0.0))
}

/// Retrains on label-poisoned copies of `train` and reports the mean bias score
/// of each resulting model on `test`.
pub fn bias_sweep(train: &Dataset, test: &Dataset, cfg: &ExperimentConfig) -> AppResult<Vec<BiasPoint>> {
    let tc = cfg.train_config()?;
    cfg.evaluate
        .bias_sweep
        .iter()
        .map(|&p| {
            let poisoned = label_poison(train, p, cfg.seed)?;
            let (net, _) = fit(cfg.init_network(train)?, &poisoned, None, &tc)?;
            Ok(BiasPoint { poison: p, accuracy: accuracy(&net, test)?, mean_bias_score: mean_bias_score(&net, test, cfg)? })
        })
        .collect()
}
