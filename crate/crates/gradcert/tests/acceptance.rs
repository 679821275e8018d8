//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Run with `cargo test -p gradcert --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gradcert::config::ExperimentConfig;
use gradcert::demo::halfmoons_sweep;
use gradcert::evaluate::{Checks, Evaluator, PointSummary};
use gradcert::idx::{encode_images, encode_labels, load_idx};
use gradcert::model_io::{from_json, to_json};
use gradcert::tabular::load_tabular;
use gradcert::AppError;
use gradcert_core::interval::{interval_matmul, interval_matmul_exact_corners};
use gradcert_core::train::{mean_probe_delta, Probe};
use gradcert_core::*;

// soundness slack for containment checks
const SLACK: f64 = 1e-9;
// criterion 1, 2
const MATMUL_CASES: usize = 1000;
const MATMUL_SAMPLES: usize = 10_000;
const MATMUL_BUDGET: Duration = Duration::from_secs(60);
// criterion 3, 4
const NETWORKS: usize = 50;
const NETWORK_SAMPLES: usize = 1000;
const RADII: [f64; 3] = [0.0, 0.01, 0.1];
const GRADIENT_BUDGET: Duration = Duration::from_secs(600);
// criterion 5
const NESTED_CASES: usize = 100;
// criterion 6
const INPUT_FD_TOL: f64 = 1e-5;
const PARAM_FD_TOL: f64 = 1e-3;
// criterion 7
const MOONS_ACCURACY: f64 = 0.85;
const MOONS_ACCURACY_MAX_EPS: f64 = 0.1;
const MOONS_BUDGET: Duration = Duration::from_secs(300);
// criterion 8, 9, 11
const DELTA_GAP: f64 = 10.0;
const PROBE: Probe = Probe { count: 100, epsilon: 0.01, gamma: 0.0 };
const CERT_EPS: f64 = 0.01;
const NEAR_ZERO: f64 = 0.05;
const ACCURACY_GAP: f64 = 0.10;
const TARGETED_EPS: [f64; 3] = [0.005, 0.01, 0.025];
const DIGITS_BUDGET: Duration = Duration::from_secs(7200);
// criterion 12
const MALFORMED_FILES: usize = 10;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, name: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, name, pass, detail };
    println!("[{}] {:>2} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
    v
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn random_interval(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> IntervalMatrix {
    let c: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let r: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..=1.0)).collect();
    IntervalMatrix::from_center_radius(&Tensor::matrix(rows, cols, c), &Tensor::matrix(rows, cols, r)).unwrap()
}

fn sample_in(m: &IntervalMatrix, rng: &mut ChaCha8Rng) -> Tensor {
    let data = m
        .lower()
        .data()
        .iter()
        .zip(m.upper().data())
        .map(|(&l, &u)| if rng.random_bool(0.25) { if rng.random() { l } else { u } } else { l + (u - l) * rng.random::<f64>() })
        .collect();
    Tensor::new(m.shape().to_vec(), data).unwrap()
}

/// Closed-form and corner-exact boxes against sampled products.
fn matmul_criteria() -> [Verdict; 2] {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut outside_closed, mut outside_exact, mut not_nested) = (0usize, 0usize, 0usize);
    for _ in 0..MATMUL_CASES {
        let (n, k, m) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
        let (a, b) = (random_interval(n, k, &mut rng), random_interval(k, m, &mut rng));
        let closed = interval_matmul(&a, &b).unwrap();
        let exact = interval_matmul_exact_corners(&a, &b).unwrap();
        if !exact.is_subset_of(&closed, SLACK) {
            not_nested += 1;
        }
        for _ in 0..MATMUL_SAMPLES {
            let p = sample_in(&a, &mut rng).matmul(&sample_in(&b, &mut rng)).unwrap();
            outside_closed += usize::from(!closed.contains(&p, SLACK));
            outside_exact += usize::from(!exact.contains(&p, SLACK));
        }
    }
    let t = start.elapsed();
    [
        verdict(
            1,
            "closed-form matmul soundness",
            outside_closed == 0 && t < MATMUL_BUDGET,
            format!("{outside_closed} violations over {MATMUL_CASES} x {MATMUL_SAMPLES} samples in {:.1}s (limit {}s)", t.as_secs_f64(), MATMUL_BUDGET.as_secs()),
        ),
        verdict(
            2,
            "corner-exact containment",
            not_nested == 0 && outside_exact == 0,
            format!("{not_nested} cases with exact box not inside the closed-form box, {outside_exact} samples outside the exact box"),
        ),
    ]
}

fn random_network(rng: &mut ChaCha8Rng, act: Activation) -> Network {
    let inputs = rng.random_range(1..=6);
    let classes = rng.random_range(2..=4);
    let depth = rng.random_range(1..=3);
    let mut specs: Vec<LayerSpec> =
        (1..depth).map(|_| LayerSpec::Dense { out_features: rng.random_range(1..=32), activation: act }).collect();
    specs.push(LayerSpec::Dense { out_features: classes, activation: Activation::Identity });
    Network::init(vec![inputs], &specs, rng).unwrap()
}

fn perturbed(net: &Network, gamma: f64, rng: &mut ChaCha8Rng) -> Network {
    let mut out = net.clone();
    let vertex = rng.random_bool(0.25);
    for p in out.parameters_mut() {
        for w in p.data_mut() {
            let u: f64 = if vertex { if rng.random() { 1.0 } else { -1.0 } } else { rng.random_range(-1.0..=1.0) };
            *w += gamma * w.abs() * u;
        }
    }
    out
}

fn jittered(x: &Tensor, eps: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = x.data().iter().map(|v| v + eps * rng.random_range(-1.0..=1.0)).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

fn test_networks() -> Vec<(Network, Tensor, LossKind)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    (0..NETWORKS)
        .map(|i| {
            let act = if i % 2 == 0 { Activation::Relu } else { Activation::Softplus };
            let net = random_network(&mut rng, act);
            let x = Tensor::column((0..net.input_len()).map(|_| rng.random_range(-1.0..=1.0)).collect());
            let loss = LossKind::CrossEntropy(rng.random_range(0..net.classes()));
            (net, x, loss)
        })
        .collect()
}

/// Monte-Carlo containment of exact gradients, and singleton exactness.
fn gradient_box_criteria(nets: &[(Network, Tensor, LossKind)]) -> [Verdict; 2] {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut violations, mut samples) = (0usize, 0usize);
    let (mut worst_width, mut worst_center) = (0.0f64, 0.0f64);
    for (net, x, loss) in nets {
        for &eps in &RADII {
            for &gamma in &RADII {
                let region = InputRegion::uniform(x.clone(), eps).unwrap();
                let model = ModelRegion::uniform(gamma);
                let b = explanation_bounds_in(net, &region, &model, loss, BoundMethod::ClosedForm).unwrap();
                if eps == 0.0 && gamma == 0.0 {
                    let v = net.input_gradient(x, loss).unwrap();
                    worst_width = worst_width.max(b.delta.max_abs());
                    worst_center = worst_center.max(b.center().max_abs_diff(&v).unwrap());
                }
                for _ in 0..NETWORK_SAMPLES {
                    let v = perturbed(net, gamma, &mut rng).input_gradient(&jittered(x, eps, &mut rng), loss).unwrap();
                    violations += usize::from(!b.contains(&v, SLACK));
                    samples += 1;
                }
            }
        }
    }
    let t = start.elapsed();
    [
        verdict(
            3,
            "gradient-box soundness",
            violations == 0 && t < GRADIENT_BUDGET,
            format!("{violations} violations over {samples} sampled (x', theta') in {:.1}s (limit {}s)", t.as_secs_f64(), GRADIENT_BUDGET.as_secs()),
        ),
        verdict(
            4,
            "singleton exactness",
            worst_width <= SLACK && worst_center <= SLACK,
            format!("max |delta| {worst_width:.2e}, max |center - gradient| {worst_center:.2e} over {} networks", nets.len()),
        ),
    ]
}

fn monotonicity_criterion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut violations = 0;
    for i in 0..NESTED_CASES {
        let net = random_network(&mut rng, if i % 2 == 0 { Activation::Relu } else { Activation::Softplus });
        let x = Tensor::column((0..net.input_len()).map(|_| rng.random_range(-1.0..=1.0)).collect());
        let loss = LossKind::CrossEntropy(0);
        let (e1, g1): (f64, f64) = (rng.random_range(0.0..0.1), rng.random_range(0.0..0.1));
        let (e2, g2) = (e1 + rng.random_range(0.0..0.1), g1 + rng.random_range(0.0..0.1));
        for method in [BoundMethod::ClosedForm, BoundMethod::ExactCorners] {
            let inner = explanation_bounds_in(&net, &InputRegion::uniform(x.clone(), e1).unwrap(), &ModelRegion::uniform(g1), &loss, method).unwrap();
            let outer = explanation_bounds_in(&net, &InputRegion::uniform(x.clone(), e2).unwrap(), &ModelRegion::uniform(g2), &loss, method).unwrap();
            violations += usize::from(!inner.is_subset_of(&outer, SLACK));
        }
    }
    verdict(5, "inclusion monotonicity", violations == 0, format!("{violations} non-nested boxes over {NESTED_CASES} cases x 2 bound methods"))
}

fn relative_error(exact: &[f64], approx: &[f64]) -> f64 {
    let diff: f64 = exact.iter().zip(approx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn gradient_check_criterion(nets: &[(Network, Tensor, LossKind)]) -> Verdict {
    let softplus: Vec<_> = nets.iter().filter(|(n, _, _)| n.layers().iter().any(|l| l.activation() == Activation::Softplus)).collect();
    let mut worst_input = 0.0f64;
    for (net, x, loss) in &softplus {
        let h = 1e-5;
        let fd: Vec<f64> = (0..x.len())
            .map(|i| {
                let (mut p, mut m) = ((*x).clone(), (*x).clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                (net.loss(&p, loss).unwrap() - net.loss(&m, loss).unwrap()) / (2.0 * h)
            })
            .collect();
        worst_input = worst_input.max(relative_error(net.input_gradient(x, loss).unwrap().data(), &fd));
    }
    // dD/dtheta on parameters whose central differences at h and h/10 agree,
    // which excludes the few sitting on a max/min switch of the bounds
    let (eps, gamma) = (0.05, 0.02);
    let (mut worst_param, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for (net, x, loss) in softplus.iter().take(10) {
        let (_, grads) = grad_cert_regularizer(net, x, eps, gamma, loss).unwrap();
        let d_at = |k: usize, j: usize, step: f64| {
            let mut n = net.clone();
            n.parameters_mut()[k].data_mut()[j] += step;
            grad_cert_regularizer(&n, x, eps, gamma, loss).unwrap().0
        };
        let (mut exact, mut approx) = (Vec::new(), Vec::new());
        for (k, g) in grads.iter().enumerate() {
            for j in 0..g.len() {
                let fd = |h: f64| (d_at(k, j, h) - d_at(k, j, -h)) / (2.0 * h);
                let (coarse, fine) = (fd(1e-5), fd(1e-6));
                if (coarse - fine).abs() > 1e-4 * (1.0 + fine.abs()) {
                    kinks += 1;
                    continue;
                }
                exact.push(g.data()[j]);
                approx.push(coarse);
            }
        }
        checked += exact.len();
        worst_param = worst_param.max(relative_error(&exact, &approx));
    }
    verdict(
        6,
        "gradient checks",
        worst_input < INPUT_FD_TOL && worst_param < PARAM_FD_TOL && checked > 0,
        format!(
            "input gradient rel. error {worst_input:.1e} (< {INPUT_FD_TOL:.0e}) on {} softplus nets; dD/dtheta rel. error {worst_param:.1e} (< {PARAM_FD_TOL:.0e}) on {checked} parameters, {kinks} skipped at kinks",
            softplus.len()
        ),
    )
}

fn halfmoons_criterion(evaluations: &mut Vec<(String, PointSummary)>) -> Verdict {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&configs().join("halfmoons.toml")).unwrap();
    let runs = halfmoons_sweep(&cfg).unwrap();
    let t = start.elapsed();
    let dispersion: Vec<f64> = runs.iter().map(|r| r.point.dispersion).collect();
    let decreasing = dispersion.windows(2).all(|w| w[1] < w[0]);
    let accurate = runs.iter().filter(|r| r.point.epsilon_t <= MOONS_ACCURACY_MAX_EPS).all(|r| r.point.accuracy >= MOONS_ACCURACY);
    let points: Vec<String> =
        runs.iter().map(|r| format!("eps_t {}: dispersion {:.3}, accuracy {:.3}", r.point.epsilon_t, r.point.dispersion, r.point.accuracy)).collect();
    // feed the sandwich check with the regularized models
    let (_, test) = cfg.load_data().unwrap();
    for r in runs.iter().filter(|r| r.point.epsilon_t > 0.0) {
        let ev = Evaluator::new(&r.net, &test, &cfg, false).unwrap();
        for eps in [0.01, 0.05] {
            let (s, _) = ev.point(eps, 0.0, Checks { untargeted: true, attack_untargeted: true, ..Checks::default() }).unwrap();
            evaluations.push((format!("half-moons eps_t {}", r.point.epsilon_t), s));
        }
    }
    verdict(
        7,
        "half-moons linearization",
        decreasing && accurate && t < MOONS_BUDGET,
        format!(
            "{}; dispersion strictly decreasing: {decreasing}; accuracy >= {MOONS_ACCURACY} at eps_t <= {MOONS_ACCURACY_MAX_EPS}: {accurate}; {:.0}s (limit {}s)",
            points.join("; "),
            t.as_secs_f64(),
            MOONS_BUDGET.as_secs()
        ),
    )
}

struct DigitsModel {
    net: Network,
    accuracy: f64,
    probe_delta: f64,
    at_cert_eps: PointSummary,
    targeted: Vec<PointSummary>,
}

fn digits_model(name: &str, evaluations: &mut Vec<(String, PointSummary)>) -> (DigitsModel, ExperimentConfig) {
    let cfg = ExperimentConfig::load(&configs().join(format!("digits-{name}.toml"))).unwrap();
    let (train, test) = cfg.load_data().unwrap();
    let (net, _) = fit(cfg.init_network(&train).unwrap(), &train, Some(&test), &cfg.train_config().unwrap()).unwrap();
    let accuracy = train::accuracy(&net, &test).unwrap();
    let probe_delta = mean_probe_delta(&net, &test, &PROBE).unwrap();
    let ev = Evaluator::new(&net, &test, &cfg, true).unwrap();
    assert_eq!(ev.targets.len(), 20, "corner masks");
    let mut targeted = Vec::new();
    let mut at_cert_eps = None;
    for eps in TARGETED_EPS {
        let (s, _) = ev.point(eps, 0.0, Checks::all()).unwrap();
        evaluations.push((format!("digits-{name} eps {eps}"), s.clone()));
        if eps == CERT_EPS {
            at_cert_eps = Some(s.clone());
        }
        targeted.push(s);
    }
    (DigitsModel { net, accuracy, probe_delta, at_cert_eps: at_cert_eps.unwrap(), targeted }, cfg)
}

fn digits_criteria(evaluations: &mut Vec<(String, PointSummary)>) -> ([Verdict; 3], DigitsModel) {
    let start = Instant::now();
    let (standard, _) = digits_model("standard", evaluations);
    let (certified, _) = digits_model("gradcert", evaluations);
    let t = start.elapsed();

    let ratio = standard.probe_delta / certified.probe_delta;
    let gap = verdict(
        8,
        "delta gap",
        ratio >= DELTA_GAP && t < DIGITS_BUDGET,
        format!(
            "mean probe sum(delta) at eps {}: standard {:.4}, GradCert {:.4}, ratio {ratio:.1} (>= {DELTA_GAP}); both models trained and evaluated in {:.0}s (limit {}s)",
            PROBE.epsilon,
            standard.probe_delta,
            certified.probe_delta,
            t.as_secs_f64(),
            DIGITS_BUDGET.as_secs()
        ),
    );

    let rate = |s: &PointSummary, f: fn(&PointSummary) -> Option<f64>| f(s).unwrap_or(f64::NAN);
    let (su, cu) = (rate(&standard.at_cert_eps, |s| s.untargeted_certified_rate), rate(&certified.at_cert_eps, |s| s.untargeted_certified_rate));
    let (sp, cp) = (rate(&standard.at_cert_eps, |s| s.prediction_certified_rate), rate(&certified.at_cert_eps, |s| s.prediction_certified_rate));
    let pass = cu > su && su <= NEAR_ZERO && cp > 0.0 && sp <= NEAR_ZERO && standard.accuracy - certified.accuracy <= ACCURACY_GAP;
    let vs = verdict(
        9,
        "certified vs. standard",
        pass,
        format!(
            "at eps {CERT_EPS}: untargeted certified {cu:.2} vs {su:.2}, prediction certified {cp:.2} vs {sp:.2} (standard <= {NEAR_ZERO}); accuracy {:.3} vs {:.3} (gap <= {ACCURACY_GAP})",
            certified.accuracy, standard.accuracy
        ),
    );

    let rates: Vec<f64> = certified.targeted.iter().map(|s| s.targeted_certified_rate.unwrap_or(f64::NAN)).collect();
    let at = rates[TARGETED_EPS.iter().position(|&e| e == CERT_EPS).unwrap()];
    let trend = rates.windows(2).all(|w| w[1] <= w[0]);
    let targeted = verdict(
        11,
        "targeted corner-mask certification",
        at > 0.0 && trend,
        format!("GradCert targeted certified rate over eps {TARGETED_EPS:?}: {rates:.3?} (tau 0.04, 20 masks); positive at {CERT_EPS}: {}; non-increasing: {trend}", at > 0.0),
    );
    ([gap, vs, targeted], certified)
}

fn sandwich_criterion(evaluations: &[(String, PointSummary)]) -> Verdict {
    let mut failures = Vec::new();
    let mut violations = 0;
    for (name, s) in evaluations {
        violations += s.violations;
        if let (Some(c), Some(a)) = (s.untargeted_certified_rate, s.untargeted_attack_robustness) {
            if c > a {
                failures.push(format!("{name} eps {}: untargeted {c} > {a}", s.epsilon));
            }
        }
        if let (Some(c), Some(a)) = (s.targeted_certified_rate_attacked, s.targeted_attack_robustness) {
            if c > a {
                failures.push(format!("{name} eps {}: targeted {c} > {a}", s.epsilon));
            }
        }
    }
    verdict(
        10,
        "certificate/attack sandwich",
        violations == 0 && failures.is_empty() && !evaluations.is_empty(),
        format!("{} evaluation runs, {violations} certified instances broken by an attack, {} rate inversions {failures:?}", evaluations.len(), failures.len()),
    )
}

fn malformed_files(dir: &Path) -> Vec<(String, Box<dyn Fn() -> Result<(), AppError>>, &'static str)> {
    let images = encode_images(2, 2, &[vec![0, 255, 128, 64], vec![1, 2, 3, 4]]);
    let labels = encode_labels(&[3, 7]);
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    };
    let good_images = write("images.idx", &images);
    let good_labels = write("labels.idx", &labels);
    let idx_case = |name: &str, bytes: Vec<u8>, as_images: bool, expect: &'static str| {
        let p = write(name, &bytes);
        let (im, lb) = if as_images { (p, good_labels.clone()) } else { (good_images.clone(), p) };
        let run: Box<dyn Fn() -> Result<(), AppError>> = Box::new(move || load_idx(&im, &lb).map(|_| ()));
        (name.to_string(), run, expect)
    };
    let mut label_magic = images.clone();
    label_magic[3] = 0x01;
    let mut image_magic = labels.clone();
    image_magic[3] = 0x03;
    let mut trailing = images.clone();
    trailing.push(0);
    let schema = write("schema.toml", b"target = \"y\"\n");
    let csv_case = |name: &str, text: &str, expect: &'static str| {
        let p = write(name, text.as_bytes());
        let s = schema.clone();
        let run: Box<dyn Fn() -> Result<(), AppError>> = Box::new(move || load_tabular(&p, &s).map(|_| ()));
        (name.to_string(), run, expect)
    };
    vec![
        idx_case("label-magic-images.idx", label_magic, true, "byte offset 0: bad magic 0x00000801"),
        idx_case("image-magic-labels.idx", image_magic, false, "byte offset 0: bad magic 0x00000803"),
        idx_case("short-header.idx", images[..10].to_vec(), true, "byte offset 8: truncated header"),
        idx_case("short-pixels.idx", images[..images.len() - 3].to_vec(), true, "truncated data: expected 8 bytes from offset 16, found 5"),
        idx_case("trailing.idx", trailing, true, "byte offset 24: 1 trailing bytes"),
        idx_case("three-labels.idx", encode_labels(&[1, 2, 3]), false, "3 labels for 2 images"),
        csv_case("not-a-number.csv", "a,y\n1,0\nx,1\n", "row 2, column 'a': cannot parse 'x' as a number"),
        csv_case("ragged.csv", "a,y\n1,0\n2\n", "row 2"),
        csv_case("no-target.csv", "a,b\n1,0\n", "target column 'y' is missing from the header"),
        csv_case("header-only.csv", "a,y\n", "no data rows"),
    ]
}

fn determinism_criterion(model: &Network) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let restored = from_json(&to_json(model).unwrap(), "model.json").unwrap();
    let exact = restored == *model
        && restored.parameters().iter().zip(model.parameters()).all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let cfg = dir.path().join("moons.toml");
    std::fs::write(
        &cfg,
        "seed = 5\nout = \"run\"\n[dataset]\nkind = \"half-moons\"\ntrain = 200\ntest = 100\n[model]\npreset = \"halfmoons\"\n\
         [train]\nregularizer = \"grad-cert\"\nalpha = 1.0\nepsilon = 0.05\nepochs = 5\nbatch_size = 32\nlr = 0.01\nprobe_count = 20\n\
         [evaluate]\nepsilons = [0.01]\ngammas = [0.01]\nlimit = 20\n[evaluate.attack]\nsteps = 10\n",
    )
    .unwrap();
    let files = ["model.json", "train.json", "train.csv", "evaluate.json", "metrics.csv", "instances.csv"];
    let run = |threads: &str| -> Vec<Vec<u8>> {
        let c = cfg.to_str().unwrap();
        let exe = env!("CARGO_BIN_EXE_gradcert");
        let ok = |args: &[&str]| Command::new(exe).args(args).status().unwrap().success();
        let model = dir.path().join("run/model.json");
        assert!(ok(&["--threads", threads, "train", "--config", c]));
        assert!(ok(&["--threads", threads, "evaluate", "--config", c, "--model", model.to_str().unwrap()]));
        files.iter().map(|f| std::fs::read(dir.path().join("run").join(f)).unwrap()).collect()
    };
    let first = run("1");
    let same = run("1") == first && run("3") == first;

    let cases = malformed_files(dir.path());
    let mut rejected = 0;
    let mut wrong = Vec::new();
    for (name, load, expect) in &cases {
        match load() {
            Err(e @ AppError::Format(_)) if e.to_string().contains(expect) && e.to_string().contains(name.as_str()) => rejected += 1,
            Err(e) => wrong.push(format!("{name}: {e}")),
            Ok(()) => wrong.push(format!("{name}: accepted")),
        }
    }
    verdict(
        12,
        "determinism and round-trips",
        exact && same && cases.len() == MALFORMED_FILES && rejected == MALFORMED_FILES,
        format!(
            "model round-trip bit-exact: {exact}; reruns (1 and 3 threads) byte-identical over {} files: {same}; {rejected}/{MALFORMED_FILES} malformed files rejected with the expected diagnostic {wrong:?}",
            files.len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();
    let mut evaluations = Vec::new();
    verdicts.extend(matmul_criteria());
    let nets = test_networks();
    verdicts.extend(gradient_box_criteria(&nets));
    verdicts.push(monotonicity_criterion());
    verdicts.push(gradient_check_criterion(&nets));
    verdicts.push(halfmoons_criterion(&mut evaluations));
    let (digits, certified) = digits_criteria(&mut evaluations);
    verdicts.extend(digits);
    verdicts.push(sandwich_criterion(&evaluations));
    verdicts.push(determinism_criterion(&certified.net));

    verdicts.sort_by_key(|v| v.id);
    println!("\nacceptance summary");
    for v in &verdicts {
        println!("[{}] {:>2} {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name);
    }
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert_eq!(verdicts.len(), 12);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
