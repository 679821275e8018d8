//! Experiment configuration files (TOML). Relative paths are resolved against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gradcert_core::attack::StepSize;
use gradcert_core::data::{synthetic_digits, synthetic_tabular};
use gradcert_core::train::Probe;
use gradcert_core::{
    half_moons, Activation, AttackConfig, AttackMode, BoundMethod, Dataset, GradientEstimator, LayerSpec, Network, Optimizer,
    Ramp, Regularizer, Similarity, TrainConfig,
};

use crate::error::{AppError, AppResult};
use crate::idx::load_idx;
use crate::tabular::load_tabular;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub evaluate: EvalSpec,
    #[serde(default)]
    pub demo: DemoSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    HalfMoons {
        #[serde(default = "d_moons_train")]
        train: usize,
        #[serde(default = "d_moons_test")]
        test: usize,
        #[serde(default = "d_moons_noise")]
        noise: f64,
    },
    SyntheticDigits {
        #[serde(default = "d_digits_train")]
        train: usize,
        #[serde(default = "d_digits_test")]
        test: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
        #[serde(default = "d_split")]
        split: f64,
    },
    SyntheticTabular {
        #[serde(default = "d_tab_rows")]
        rows: usize,
        #[serde(default = "d_tab_features")]
        features: usize,
        #[serde(default = "d_split")]
        split: f64,
    },
}

fn d_moons_train() -> usize {
    400
}
fn d_moons_test() -> usize {
    200
}
fn d_moons_noise() -> f64 {
    0.1
}
fn d_digits_train() -> usize {
    10_000
}
fn d_digits_test() -> usize {
    1_000
}
fn d_split() -> f64 {
    0.8
}
fn d_tab_rows() -> usize {
    1_000
}
fn d_tab_features() -> usize {
    8
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `halfmoons`, `fcn-128`, `fcn-256`, `cnn` or `tabular`.
    pub preset: String,
    #[serde(default = "d_activation")]
    pub activation: String,
}

fn d_activation() -> String {
    "relu".into()
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    /// `none`, `grad-cert`, `l2-noise`, `gnorm`, `gsum-norm` or `pgd`.
    pub regularizer: String,
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub inner_steps: usize,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ramp_warmup: f64,
    /// 0 disables the ramp.
    pub ramp_length: f64,
    pub probe_count: usize,
    pub probe_epsilon: f64,
    pub probe_gamma: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            regularizer: "none".into(),
            alpha: 0.5,
            epsilon: 0.025,
            gamma: 0.0,
            inner_steps: 10,
            optimizer: "adam".into(),
            lr: 1e-3,
            momentum: 0.9,
            epochs: 10,
            batch_size: 64,
            ramp_warmup: 0.0,
            ramp_length: 0.5,
            probe_count: 100,
            probe_epsilon: 0.01,
            probe_gamma: 0.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Input radii, each evaluated with γ = 0.
    pub epsilons: Vec<f64>,
    /// Parameter radii, each evaluated with ε = 0.
    pub gammas: Vec<f64>,
    /// Test inputs evaluated (0 = all).
    pub limit: usize,
    pub tau_untargeted: f64,
    pub tau_norm_ratio: f64,
    pub tau_targeted: f64,
    /// `mse` or `cosine`.
    pub similarity: String,
    /// `true-label` (cross-entropy) or `predicted-logit`.
    pub explanation: String,
    /// `exact-corners` or `closed-form`.
    pub bound_method: String,
    /// `corners` for corner masks, `none`, or a JSON file of flat arrays.
    pub targets: String,
    pub mask_size: usize,
    pub mask_insets: usize,
    pub attack: AttackSpec,
    /// Label-poisoning fractions; each retrains with the train section.
    pub bias_sweep: Vec<f64>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            epsilons: Vec::new(),
            gammas: Vec::new(),
            limit: 100,
            tau_untargeted: 1.0,
            tau_norm_ratio: 2.0,
            tau_targeted: 0.04,
            similarity: "mse".into(),
            explanation: "true-label".into(),
            bound_method: "exact-corners".into(),
            targets: "corners".into(),
            mask_size: 5,
            mask_insets: 5,
            attack: AttackSpec::default(),
            bias_sweep: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub enabled: bool,
    pub steps: usize,
    /// Multiple of the region radius covered by all steps together.
    pub travel: f64,
    pub restarts: usize,
    /// `double-backward` or `finite-difference`.
    pub estimator: String,
    pub fd_step: f64,
    /// Inputs attacked per grid point (0 = every evaluated input).
    pub limit: usize,
    /// Targets attacked per input (0 = all).
    pub targets: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            enabled: true,
            steps: 100,
            travel: 2.5,
            restarts: 1,
            estimator: "double-backward".into(),
            fd_step: 1e-4,
            limit: 0,
            targets: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSpec {
    pub epsilons: Vec<f64>,
    pub grid: usize,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec { epsilons: vec![0.0, 0.05, 0.1, 0.2], grid: 32 }
    }
}

fn bad(msg: impl Into<String>) -> AppError {
    AppError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> AppResult<Self> {
        toml::from_str(text).map_err(|e| bad(format!("{origin}: {e}")))
    }

    /// Reads, resolves relative paths and validates; referenced files must exist.
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::input(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Idx { train_images, train_labels, test_images, test_labels, .. } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetSpec::Csv { path, schema, .. } => {
                fix(path);
                fix(schema);
            }
            _ => {}
        }
        fix(&mut self.out);
        if !matches!(self.evaluate.targets.as_str(), "corners" | "none") {
            let mut p = PathBuf::from(&self.evaluate.targets);
            fix(&mut p);
            self.evaluate.targets = p.display().to_string();
        }
    }

    pub fn validate(&self) -> AppResult<()> {
        let files: Vec<&PathBuf> = match &self.dataset {
            DatasetSpec::Idx { train_images, train_labels, test_images, test_labels, .. } => {
                vec![train_images, train_labels, test_images, test_labels]
            }
            DatasetSpec::Csv { path, schema, split } => {
                check_split(*split)?;
                vec![path, schema]
            }
            DatasetSpec::SyntheticTabular { split, .. } => {
                check_split(*split)?;
                vec![]
            }
            DatasetSpec::HalfMoons { train, test, .. } => {
                if *train == 0 || *test == 0 || (train + test) % 2 != 0 {
                    return Err(bad("half-moons needs non-empty splits with an even total"));
                }
                vec![]
            }
            _ => vec![],
        };
        for f in files {
            if !f.is_file() {
                return Err(bad(format!("referenced file {} does not exist", f.display())));
            }
        }
        preset_layers(&self.model.preset, 2, activation(&self.model.activation)?)?;
        self.train_config()?.validate()?;
        let e = &self.evaluate;
        for v in e.epsilons.iter().chain(&e.gammas) {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(bad(format!("grid radii must be non-negative, got {v}")));
            }
        }
        for t in [e.tau_untargeted, e.tau_norm_ratio, e.tau_targeted] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(bad(format!("thresholds must be positive, got {t}")));
            }
        }
        self.similarity()?;
        self.bound_method()?;
        if !matches!(e.explanation.as_str(), "true-label" | "predicted-logit") {
            return Err(bad(format!("unknown explanation '{}'", e.explanation)));
        }
        if !matches!(e.targets.as_str(), "corners" | "none") && !Path::new(&e.targets).is_file() {
            return Err(bad(format!("target file {} does not exist", e.targets)));
        }
        if e.bias_sweep.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(bad("bias sweep fractions must lie in [0, 1]"));
        }
        self.attack_config(AttackMode::UntargetedInput)?.validate()?;
        if self.demo.grid < 2 {
            return Err(bad("demo grid needs at least 2 points per side"));
        }
        Ok(())
    }

    pub fn similarity(&self) -> AppResult<Similarity> {
        Similarity::from_name(&self.evaluate.similarity).ok_or_else(|| bad(format!("unknown similarity '{}'", self.evaluate.similarity)))
    }

    pub fn bound_method(&self) -> AppResult<BoundMethod> {
        match self.evaluate.bound_method.as_str() {
            "exact-corners" => Ok(BoundMethod::ExactCorners),
            "closed-form" => Ok(BoundMethod::ClosedForm),
            other => Err(bad(format!("unknown bound method '{other}'"))),
        }
    }

    pub fn regularizer(&self) -> AppResult<Regularizer> {
        let t = &self.train;
        Ok(match t.regularizer.as_str() {
            "none" => Regularizer::None,
            "grad-cert" => Regularizer::GradCert { alpha: t.alpha, epsilon: t.epsilon, gamma: t.gamma },
            "l2-noise" => Regularizer::L2Noise { alpha: t.alpha, epsilon: t.epsilon },
            "gnorm" => Regularizer::GNorm { alpha: t.alpha, epsilon: t.epsilon, inner_steps: t.inner_steps },
            "gsum-norm" => Regularizer::GSumNorm { alpha: t.alpha, epsilon: t.epsilon, inner_steps: t.inner_steps },
            "pgd" => Regularizer::PgdAdv { epsilon: t.epsilon, inner_steps: t.inner_steps },
            other => return Err(bad(format!("unknown regularizer '{other}'"))),
        })
    }

    pub fn train_config(&self) -> AppResult<TrainConfig> {
        let t = &self.train;
        let optimizer = match t.optimizer.as_str() {
            "adam" => Optimizer::adam(t.lr),
            "sgd" => Optimizer::Sgd { lr: t.lr, momentum: t.momentum },
            other => return Err(bad(format!("unknown optimizer '{other}'"))),
        };
        Ok(TrainConfig {
            regularizer: self.regularizer()?,
            optimizer,
            epochs: t.epochs,
            batch_size: t.batch_size,
            ramp: if t.ramp_length == 0.0 { Ramp::None } else { Ramp::Linear { warmup: t.ramp_warmup, length: t.ramp_length } },
            seed: self.seed,
            probe: Probe { count: t.probe_count, epsilon: t.probe_epsilon, gamma: t.probe_gamma },
        })
    }

    pub fn attack_config(&self, mode: AttackMode) -> AppResult<AttackConfig> {
        let a = &self.evaluate.attack;
        let estimator = match a.estimator.as_str() {
            "double-backward" => GradientEstimator::DoubleBackward,
            "finite-difference" => GradientEstimator::CentralFiniteDifference(a.fd_step),
            other => return Err(bad(format!("unknown gradient estimator '{other}'"))),
        };
        Ok(AttackConfig {
            mode,
            steps: a.steps,
            step_size: StepSize::Relative(a.travel / a.steps.max(1) as f64),
            restarts: a.restarts,
            gradient_estimator: estimator,
            seed: self.seed,
        })
    }

    /// Fresh network for the configured preset, initialized from the seed.
    pub fn init_network(&self, data: &Dataset) -> AppResult<Network> {
        let specs = preset_layers(&self.model.preset, data.classes, activation(&self.model.activation)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(Network::init(data.input_shape.clone(), &specs, &mut rng)?)
    }

    /// Train and test splits.
    pub fn load_data(&self) -> AppResult<(Dataset, Dataset)> {
        let seed = self.seed;
        Ok(match &self.dataset {
            DatasetSpec::HalfMoons { train, test, noise } => {
                // one draw, so both splits share the same scaling
                let all = half_moons(train + test, *noise, seed)?;
                all.split(*train as f64 / (train + test) as f64, seed)?
            }
            DatasetSpec::SyntheticDigits { train, test } => {
                (synthetic_digits(*train, seed)?, synthetic_digits(*test, seed.wrapping_add(1))?)
            }
            DatasetSpec::Idx { train_images, train_labels, test_images, test_labels, limit_train, limit_test } => {
                let train = load_idx(train_images, train_labels)?;
                let test = load_idx(test_images, test_labels)?;
                let train = match limit_train {
                    Some(n) => train.head(*n),
                    None => train,
                };
                let test = match limit_test {
                    Some(n) => test.head(*n),
                    None => test,
                };
                (train, test)
            }
            DatasetSpec::Csv { path, schema, split } => {
                let (ds, _) = load_tabular(path, schema)?;
                ds.split(*split, seed)?
            }
            DatasetSpec::SyntheticTabular { rows, features, split } => synthetic_tabular(*rows, *features, seed)?.split(*split, seed)?,
        })
    }
}

fn check_split(split: f64) -> AppResult<()> {
    if split > 0.0 && split < 1.0 {
        Ok(())
    } else {
        Err(bad(format!("split fraction must lie in (0, 1), got {split}")))
    }
}

fn activation(name: &str) -> AppResult<Activation> {
    Activation::from_name(name).ok_or_else(|| bad(format!("unknown activation '{name}'")))
}

/// Layer stack of a named architecture ending in `classes` logits.
pub fn preset_layers(preset: &str, classes: usize, act: Activation) -> AppResult<Vec<LayerSpec>> {
    let dense = |out_features| LayerSpec::Dense { out_features, activation: act };
    let logits = LayerSpec::Dense { out_features: classes, activation: Activation::Identity };
    Ok(match preset {
        "halfmoons" => vec![dense(32), dense(32), logits],
        "fcn-128" => vec![LayerSpec::Flatten, dense(128), dense(128), logits],
        "fcn-256" => vec![LayerSpec::Flatten, dense(256), dense(256), logits],
        "tabular" => vec![dense(256), dense(256), logits],
        "cnn" => vec![
            LayerSpec::Conv2d { filters: 16, kernel_h: 4, kernel_w: 4, stride: 2, padding: 1, activation: act },
            LayerSpec::Conv2d { filters: 32, kernel_h: 4, kernel_w: 4, stride: 1, padding: 1, activation: act },
            LayerSpec::Flatten,
            dense(100),
            logits,
        ],
        other => return Err(bad(format!("unknown architecture preset '{other}'"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[dataset]\nkind = \"half-moons\"\n[model]\npreset = \"halfmoons\"\n";

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(MINIMAL, "t").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.evaluate.tau_targeted, 0.04);
        assert_eq!(cfg.evaluate.tau_norm_ratio, 2.0);
        assert_eq!(cfg.dataset, DatasetSpec::HalfMoons { train: 400, test: 200, noise: 0.1 });
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}[train]\nalpah = 1.0\n"), "t").is_err());
        let cfg = ExperimentConfig::parse(&format!("{MINIMAL}[train]\nregularizer = \"magic\"\n"), "t").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let cfg = ExperimentConfig::parse(&MINIMAL.replace("halfmoons\"", "vgg\""), "t").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_schema_is_a_config_error() {
        let text = "[dataset]\nkind = \"csv\"\npath = \"a.csv\"\nschema = \"nope.toml\"\n[model]\npreset = \"tabular\"\n";
        let mut cfg = ExperimentConfig::parse(text, "t").unwrap();
        cfg.resolve(Path::new("/nonexistent"));
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/a.csv"));
    }

    #[test]
    fn presets_build_for_their_inputs() {
        for (preset, shape) in [("halfmoons", vec![2]), ("fcn-128", vec![1, 28, 28]), ("fcn-256", vec![1, 28, 28]), ("cnn", vec![1, 28, 28]), ("tabular", vec![12])] {
            let specs = preset_layers(preset, 10, Activation::Relu).unwrap();
            let net = Network::init(shape, &specs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(net.classes(), 10);
        }
    }
}
