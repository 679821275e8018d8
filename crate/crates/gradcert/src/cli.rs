//! Subcommands: train, certify, attack, evaluate and demo-halfmoons.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use gradcert_core::train::accuracy;
use gradcert_core::{fit, TrainReport};

use crate::config::ExperimentConfig;
use crate::demo::halfmoons_sweep;
use crate::error::{AppError, AppResult};
use crate::evaluate::{bias_sweep, grid, Checks, Evaluator, InstanceResult, PointSummary};
use crate::model_io;
use crate::report::{csv_bytes, write_atomic, Report};

#[derive(Parser, Debug)]
#[command(name = "gradcert", version, about = "Certified bounds on input-gradient explanations")]
struct Cli {
    /// Worker threads for per-input evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it with per-epoch metrics.
    Train(ConfigArg),
    /// Certify explanations of a trained model on the test split.
    Certify(CertifyArgs),
    /// Attack explanations of a trained model on the test split.
    Attack(AttackArgs),
    /// Accuracy, certificates and attacks over the configured grid.
    Evaluate(ModelArgs),
    /// GradCert sweep on half-moons with decision-gradient grids.
    DemoHalfmoons(DemoArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct Radii {
    /// Input radius (defaults to the first configured ε, else 0).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Relative parameter radius.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Threshold for the selected mode (defaults to the configured preset).
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CertifyMode {
    Untargeted,
    NormRatio,
    Targeted,
    Prediction,
    All,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    radii: Radii,
    #[arg(long, value_enum, default_value = "untargeted")]
    mode: CertifyMode,
    /// `corners`, `none`, or a JSON file of flat target arrays.
    #[arg(long)]
    targets: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackKind {
    Untargeted,
    Targeted,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    radii: Radii,
    #[arg(long, value_enum, default_value = "untargeted")]
    mode: AttackKind,
    #[arg(long)]
    steps: Option<usize>,
    /// `double-backward` or `finite-difference`.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    targets: Option<String>,
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Defaults to the built-in half-moons setup.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Built-in configuration of `demo-halfmoons`.
pub const DEMO_CONFIG: &str = include_str!("../configs/halfmoons.toml");

pub fn run<I, T>(args: I) -> AppResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(AppError::Usage(e.to_string().trim_end().to_string())),
    };
    if cli.threads == Some(0) {
        return Err(AppError::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let overrides = |mut cfg: ExperimentConfig| {
        if let Some(o) = &cli.out {
            cfg.out = o.clone();
        }
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        cfg
    };
    match &cli.command {
        Command::Train(a) => cmd_train(&overrides(ExperimentConfig::load(&a.config)?)),
        Command::Certify(a) => cmd_certify(overrides(ExperimentConfig::load(&a.model.config)?), a),
        Command::Attack(a) => cmd_attack(overrides(ExperimentConfig::load(&a.model.config)?), a),
        Command::Evaluate(a) => cmd_evaluate(&overrides(ExperimentConfig::load(&a.config)?), a),
        Command::DemoHalfmoons(a) => {
            let cfg = match &a.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => {
                    let mut c = ExperimentConfig::parse(DEMO_CONFIG, "built-in demo config")?;
                    c.resolve(Path::new("."));
                    c.validate()?;
                    c
                }
            };
            cmd_demo(&overrides(cfg))
        }
    }
}

fn config_value(cfg: &ExperimentConfig) -> AppResult<Value> {
    serde_json::to_value(cfg).map_err(|e| AppError::Runtime(e.to_string()))
}

/// Files are produced in memory first, so nothing is written unless the whole
/// command succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(cfg: &ExperimentConfig) -> Self {
        Outputs { dir: cfg.out.clone(), files: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn report(&mut self, name: &str, report: &Report) -> AppResult<()> {
        let mut text = report.to_json()?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> AppResult<()> {
        let bytes = csv_bytes(header, rows)?;
        self.add(name, bytes);
        Ok(())
    }

    fn commit(self) -> AppResult<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| AppError::output(&self.dir, e))?;
        for (name, bytes) in &self.files {
            write_atomic(&self.dir.join(name), bytes)?;
        }
        for (name, _) in &self.files {
            eprintln!("wrote {}", self.dir.join(name).display());
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn epoch_rows(report: &TrainReport) -> Vec<Vec<String>> {
    report
        .epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), fmt(e.train_loss), fmt(e.regularizer), fmt(e.test_accuracy), fmt(e.probe_delta)])
        .collect()
}

const EPOCH_HEADER: [&str; 5] = ["epoch", "train_loss", "regularizer", "test_accuracy", "probe_delta"];

fn epochs_json(report: &TrainReport) -> Value {
    Value::Array(
        report
            .epochs
            .iter()
            .map(|e| {
                json!({"epoch": e.epoch, "train_loss": e.train_loss, "regularizer": e.regularizer,
                       "test_accuracy": e.test_accuracy, "probe_delta": e.probe_delta})
            })
            .collect(),
    )
}

pub fn cmd_train(cfg: &ExperimentConfig) -> AppResult<()> {
    let (train, test) = cfg.load_data()?;
    let tc = cfg.train_config()?;
    let (net, report) = fit(cfg.init_network(&train)?, &train, Some(&test), &tc)?;
    let results = json!({
        "dataset": train.name,
        "train_size": train.len(),
        "test_size": test.len(),
        "parameters": net.parameter_count(),
        "regularizer": tc.regularizer.name(),
        "final_test_accuracy": accuracy(&net, &test)?,
        "epochs": epochs_json(&report),
    });
    let mut out = Outputs::new(cfg);
    out.add("model.json", model_io::to_json(&net)?.into_bytes());
    out.report("train.json", &Report::new("train", cfg.seed, config_value(cfg)?, results))?;
    out.csv("train.csv", &EPOCH_HEADER, &epoch_rows(&report))?;
    out.commit()
}

const INSTANCE_HEADER: [&str; 18] = [
    "epsilon",
    "gamma",
    "index",
    "label",
    "predicted",
    "total_delta",
    "untargeted_score",
    "untargeted_certified",
    "norm_ratio",
    "norm_ratio_certified",
    "prediction_certified",
    "targeted_certified",
    "targeted_total",
    "attack_distance",
    "attack_robust",
    "targeted_attacked",
    "targeted_broken",
    "violations",
];

fn instance_row(eps: f64, gamma: f64, r: &InstanceResult) -> Vec<String> {
    vec![
        fmt(eps),
        fmt(gamma),
        r.index.to_string(),
        r.label.to_string(),
        r.predicted.to_string(),
        fmt(r.total_delta),
        opt(r.untargeted_score),
        opt(r.untargeted_certified),
        opt(r.norm_ratio),
        opt(r.norm_ratio_certified),
        opt(r.prediction_certified),
        opt(r.targeted_certified),
        opt(r.targeted_total),
        opt(r.attack_distance),
        opt(r.attack_robust),
        opt(r.targeted_attacked),
        opt(r.targeted_broken),
        r.violations.to_string(),
    ]
}

const METRIC_HEADER: [&str; 13] = [
    "epsilon",
    "gamma",
    "inputs",
    "accuracy",
    "mean_total_delta",
    "untargeted_certified_rate",
    "norm_ratio_certified_rate",
    "targeted_certified_rate",
    "prediction_certified_rate",
    "untargeted_attack_robustness",
    "targeted_attack_robustness",
    "targeted_certified_rate_attacked",
    "violations",
];

fn metric_row(s: &PointSummary) -> Vec<String> {
    vec![
        fmt(s.epsilon),
        fmt(s.gamma),
        s.inputs.to_string(),
        fmt(s.accuracy),
        fmt(s.mean_total_delta),
        opt(s.untargeted_certified_rate),
        opt(s.norm_ratio_certified_rate),
        opt(s.targeted_certified_rate),
        opt(s.prediction_certified_rate),
        opt(s.untargeted_attack_robustness),
        opt(s.targeted_attack_robustness),
        opt(s.targeted_certified_rate_attacked),
        s.violations.to_string(),
    ]
}

fn warn_violations(s: &PointSummary) {
    if s.violations > 0 {
        eprintln!(
            "gradcert: warning: {} certified instance(s) broken by an attack at epsilon {} gamma {}",
            s.violations, s.epsilon, s.gamma
        );
    }
}

fn apply_radii(cfg: &mut ExperimentConfig, r: &Radii, targeted: bool, norm_ratio: bool) -> (f64, f64) {
    if let Some(t) = r.tau {
        if targeted {
            cfg.evaluate.tau_targeted = t;
        } else if norm_ratio {
            cfg.evaluate.tau_norm_ratio = t;
        } else {
            cfg.evaluate.tau_untargeted = t;
        }
    }
    (r.epsilon.unwrap_or_else(|| cfg.evaluate.epsilons.first().copied().unwrap_or(0.0)), r.gamma)
}

fn check_radii(eps: f64, gamma: f64) -> AppResult<()> {
    if eps >= 0.0 && gamma >= 0.0 && eps.is_finite() && gamma.is_finite() {
        Ok(())
    } else {
        Err(AppError::Usage(format!("radii must be non-negative, got epsilon {eps} gamma {gamma}")))
    }
}

/// Loads the model and the test split, checking they fit before any work.
fn model_and_test(cfg: &ExperimentConfig, model: &Path) -> AppResult<(gradcert_core::Network, gradcert_core::Dataset, gradcert_core::Dataset)> {
    let net = model_io::load(model)?;
    let (train, test) = cfg.load_data()?;
    crate::evaluate::check_compatible(&net, &test)?;
    Ok((net, train, test))
}

fn cmd_certify(mut cfg: ExperimentConfig, a: &CertifyArgs) -> AppResult<()> {
    if let Some(t) = &a.targets {
        cfg.evaluate.targets = t.clone();
    }
    let (eps, gamma) = apply_radii(&mut cfg, &a.radii, matches!(a.mode, CertifyMode::Targeted), matches!(a.mode, CertifyMode::NormRatio));
    check_radii(eps, gamma)?;
    cfg.validate()?;
    let checks = match a.mode {
        CertifyMode::Untargeted => Checks { untargeted: true, ..Checks::default() },
        CertifyMode::NormRatio => Checks { norm_ratio: true, ..Checks::default() },
        CertifyMode::Targeted => Checks { targeted: true, ..Checks::default() },
        CertifyMode::Prediction => Checks { prediction: true, ..Checks::default() },
        CertifyMode::All => Checks::certificates(),
    };
    let (net, _, test) = model_and_test(&cfg, &a.model.model)?;
    let ev = Evaluator::new(&net, &test, &cfg, checks.targeted)?;
    let mut checks = checks;
    if matches!(a.mode, CertifyMode::All) && ev.targets.is_empty() {
        checks.targeted = false;
    } else if checks.targeted && ev.targets.is_empty() {
        return Err(AppError::Config("targeted certification needs targets (image inputs with `corners`, or a target file)".into()));
    }
    let (summary, rows) = ev.point(eps, gamma, checks)?;
    let results = json!({"mode": format!("{:?}", a.mode).to_lowercase(), "summary": summary, "instances": rows});
    let mut out = Outputs::new(&cfg);
    out.report("certify.json", &Report::new("certify", cfg.seed, config_value(&cfg)?, results))?;
    out.csv("certify.csv", &INSTANCE_HEADER, &rows.iter().map(|r| instance_row(eps, gamma, r)).collect::<Vec<_>>())?;
    out.commit()
}

fn cmd_attack(mut cfg: ExperimentConfig, a: &AttackArgs) -> AppResult<()> {
    if let Some(s) = a.steps {
        cfg.evaluate.attack.steps = s;
    }
    if let Some(e) = &a.estimator {
        cfg.evaluate.attack.estimator = e.clone();
    }
    if let Some(t) = &a.targets {
        cfg.evaluate.targets = t.clone();
    }
    let targeted = matches!(a.mode, AttackKind::Targeted);
    let (eps, gamma) = apply_radii(&mut cfg, &a.radii, targeted, false);
    check_radii(eps, gamma)?;
    cfg.validate()?;
    let checks = if targeted {
        Checks { attack_targeted: true, ..Checks::default() }
    } else {
        Checks { attack_untargeted: true, ..Checks::default() }
    };
    let (net, _, test) = model_and_test(&cfg, &a.model.model)?;
    let ev = Evaluator::new(&net, &test, &cfg, targeted)?;
    if targeted && ev.targets.is_empty() {
        return Err(AppError::Config("targeted attacks need targets (image inputs with `corners`, or a target file)".into()));
    }
    let (summary, rows) = ev.point(eps, gamma, checks)?;
    let results = json!({"mode": if targeted { "targeted" } else { "untargeted" }, "summary": summary, "instances": rows});
    let mut out = Outputs::new(&cfg);
    out.report("attack.json", &Report::new("attack", cfg.seed, config_value(&cfg)?, results))?;
    out.csv("attack.csv", &INSTANCE_HEADER, &rows.iter().map(|r| instance_row(eps, gamma, r)).collect::<Vec<_>>())?;
    out.commit()
}

fn cmd_evaluate(cfg: &ExperimentConfig, m: &ModelArgs) -> AppResult<()> {
    let (net, train, test) = model_and_test(cfg, &m.model)?;
    if !cfg.evaluate.bias_sweep.is_empty() && test.sensitive_indices.is_empty() {
        return Err(AppError::Config(format!("dataset '{}' has no sensitive attribute for a bias sweep", test.name)));
    }
    let checks = if cfg.evaluate.attack.enabled { Checks::all() } else { Checks::certificates() };
    let ev = Evaluator::new(&net, &test, cfg, true)?;
    let mut points = Vec::new();
    let mut instances = Vec::new();
    for (eps, gamma) in grid(cfg) {
        let (s, rows) = ev.point(eps, gamma, checks)?;
        warn_violations(&s);
        instances.extend(rows.iter().map(|r| instance_row(eps, gamma, r)));
        points.push(s);
    }
    let bias = bias_sweep(&train, &test, cfg)?;
    let results = json!({
        "dataset": test.name,
        "test_size": test.len(),
        "evaluated_inputs": ev.indices.len(),
        "targets": ev.targets.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
        "accuracy": accuracy(&net, &test)?,
        "points": points,
        "bias_sweep": bias,
    });
    let mut out = Outputs::new(cfg);
    out.report("evaluate.json", &Report::new("evaluate", cfg.seed, config_value(cfg)?, results))?;
    if !points.is_empty() {
        out.csv("metrics.csv", &METRIC_HEADER, &points.iter().map(metric_row).collect::<Vec<_>>())?;
        out.csv("instances.csv", &INSTANCE_HEADER, &instances)?;
    }
    if !bias.is_empty() {
        let rows: Vec<Vec<String>> = bias.iter().map(|b| vec![fmt(b.poison), fmt(b.accuracy), fmt(b.mean_bias_score)]).collect();
        out.csv("bias.csv", &["poison", "accuracy", "mean_bias_score"], &rows)?;
    }
    out.commit()
}

fn cmd_demo(cfg: &ExperimentConfig) -> AppResult<()> {
    let runs = halfmoons_sweep(cfg)?;
    let mut out = Outputs::new(cfg);
    let mut sweep_rows = Vec::new();
    for run in &runs {
        let tag = format!("eps{}", run.point.epsilon_t);
        out.add(format!("model_{tag}.json"), model_io::to_json(&run.net)?.into_bytes());
        let rows: Vec<Vec<String>> = run.grid.iter().map(|p| p.iter().map(|v| fmt(*v)).collect()).collect();
        out.csv(&format!("grid_{tag}.csv"), &["x1", "x2", "margin", "grad_x1", "grad_x2"], &rows)?;
        out.csv(&format!("train_{tag}.csv"), &EPOCH_HEADER, &epoch_rows(&run.report))?;
        let p = &run.point;
        sweep_rows.push(vec![fmt(p.epsilon_t), fmt(p.accuracy), fmt(p.dispersion), fmt(p.final_probe_delta)]);
    }
    out.csv("sweep.csv", &["epsilon_t", "accuracy", "dispersion", "final_probe_delta"], &sweep_rows)?;
    let results = json!({"sweep": runs.iter().map(|r| &r.point).collect::<Vec<_>>()});
    out.report("demo.json", &Report::new("demo-halfmoons", cfg.seed, config_value(cfg)?, results))?;
    out.commit()
}
