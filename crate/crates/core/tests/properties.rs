//! Property tests over random intervals, networks and regions.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gradcert_core::attack::AdversarialPoint;
use gradcert_core::certify::{certify_untargeted_with, untargeted_norm_ratio};
use gradcert_core::data::minibatches;
use gradcert_core::interval::{interval_hadamard, interval_matmul, interval_matmul_exact_corners};
use gradcert_core::*;

const SLACK: f64 = 1e-9;

fn interval(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> IntervalMatrix {
    let c: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    let r: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    IntervalMatrix::from_center_radius(&Tensor::matrix(rows, cols, c), &Tensor::matrix(rows, cols, r)).unwrap()
}

fn sample(m: &IntervalMatrix, rng: &mut ChaCha8Rng) -> Tensor {
    let data = m.lower().data().iter().zip(m.upper().data()).map(|(&l, &u)| l + (u - l) * rng.random::<f64>()).collect();
    Tensor::new(m.shape().to_vec(), data).unwrap()
}

fn random_net(seed: u64, inputs: usize, act: Activation) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut specs: Vec<LayerSpec> = (1..depth)
        .map(|_| LayerSpec::Dense { out_features: rng.random_range(2..=8), activation: act })
        .collect();
    specs.push(LayerSpec::Dense { out_features: 3, activation: Activation::Identity });
    Network::init(vec![inputs], &specs, &mut rng).unwrap()
}

fn perturbed(net: &Network, gamma: f64, rng: &mut ChaCha8Rng) -> Network {
    let mut out = net.clone();
    for p in out.parameters_mut() {
        for w in p.data_mut() {
            *w += gamma * w.abs() * rng.random_range(-1.0..=1.0);
        }
    }
    out
}

fn in_box(x: &Tensor, eps: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = x.data().iter().map(|v| v + eps * rng.random_range(-1.0..=1.0)).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn products_of_members_stay_in_both_boxes(seed in any::<u64>(), n in 1usize..5, k in 1usize..5, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (interval(n, k, &mut rng), interval(k, m, &mut rng));
        let lemma = interval_matmul(&a, &b).unwrap();
        let exact = interval_matmul_exact_corners(&a, &b).unwrap();
        prop_assert!(exact.is_subset_of(&lemma, SLACK));
        for _ in 0..50 {
            let p = sample(&a, &mut rng).matmul(&sample(&b, &mut rng)).unwrap();
            prop_assert!(exact.contains(&p, SLACK));
        }
    }

    #[test]
    fn hadamard_is_tight_at_corners(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (interval(n, 1, &mut rng), interval(n, 1, &mut rng));
        let h = interval_hadamard(&a, &b).unwrap();
        for i in 0..n {
            let (al, au, bl, bu) = (a.lower().data()[i], a.upper().data()[i], b.lower().data()[i], b.upper().data()[i]);
            let corners = [al * bl, al * bu, au * bl, au * bu];
            prop_assert_eq!(h.lower().data()[i], corners.iter().cloned().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(h.upper().data()[i], corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
    }

    #[test]
    fn sampled_gradients_lie_in_the_box(
        seed in any::<u64>(),
        softplus in any::<bool>(),
        eps in prop::sample::select(vec![0.0, 0.01, 0.1]),
        gamma in prop::sample::select(vec![0.0, 0.01, 0.1]),
        label in 0usize..3,
    ) {
        let act = if softplus { Activation::Softplus } else { Activation::Relu };
        let net = random_net(seed, 4, act);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Tensor::column((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
        let loss = LossKind::CrossEntropy(label);
        for method in [BoundMethod::ClosedForm, BoundMethod::ExactCorners] {
            let region = InputRegion::uniform(x.clone(), eps).unwrap();
            let b = explanation_bounds_in(&net, &region, &ModelRegion::uniform(gamma), &loss, method).unwrap();
            for _ in 0..20 {
                let v = perturbed(&net, gamma, &mut rng).input_gradient(&in_box(&x, eps, &mut rng), &loss).unwrap();
                prop_assert!(b.contains(&v, SLACK), "{:?}", method);
            }
        }
    }

    #[test]
    fn nested_regions_give_nested_boxes(seed in any::<u64>(), e1 in 0.0..0.05f64, e2 in 0.0..0.05f64, g1 in 0.0..0.05f64, g2 in 0.0..0.05f64) {
        let net = random_net(seed, 3, Activation::Relu);
        let x = Tensor::column(vec![0.3, -0.2, 0.5]);
        let loss = LossKind::CrossEntropy(1);
        let small = explanation_bounds(&net, &x, e1, g1, &loss).unwrap();
        let large = explanation_bounds(&net, &x, e1 + e2, g1 + g2, &loss).unwrap();
        prop_assert!(small.is_subset_of(&large, SLACK));
    }

    #[test]
    fn point_regions_collapse_to_the_gradient(seed in any::<u64>(), softplus in any::<bool>()) {
        let act = if softplus { Activation::Softplus } else { Activation::Relu };
        let net = random_net(seed, 5, act);
        let x = Tensor::column(vec![0.1, 0.9, -0.4, 0.0, 0.7]);
        let loss = LossKind::CrossEntropy(2);
        let b = explanation_bounds(&net, &x, 0.0, 0.0, &loss).unwrap();
        prop_assert!(b.delta.max_abs() <= SLACK);
        prop_assert!(b.center().max_abs_diff(&net.input_gradient(&x, &loss).unwrap()).unwrap() <= SLACK);
    }

    #[test]
    fn witness_is_the_worst_member(seed in any::<u64>(), n in 1usize..8, tau in 0.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = interval(n, 1, &mut rng);
        let b = GradientBox::new(m.lower().clone(), m.upper().clone()).unwrap();
        let v = sample(&m, &mut rng);
        let w = untargeted_witness(&b, &v).unwrap();
        prop_assert!(b.contains(&w, 0.0));
        let worst = mse(&w, &v).unwrap();
        for _ in 0..50 {
            prop_assert!(mse(&sample(&m, &mut rng), &v).unwrap() <= worst + SLACK);
        }
        let outcome = certify_untargeted_with(&b, &v, tau, Similarity::Mse).unwrap();
        prop_assert_eq!(outcome.certified, worst <= tau);
        if v.l2_norm() > 0.0 {
            prop_assert!((untargeted_norm_ratio(&b, &v).unwrap() - w.l2_norm() / v.l2_norm()).abs() <= SLACK);
        }
    }

    #[test]
    fn input_attacks_stay_in_the_region(seed in any::<u64>(), eps in 0.001..0.2f64) {
        let net = random_net(seed, 3, Activation::Softplus);
        let x = Tensor::column(vec![0.5, 0.5, 0.5]);
        let region = InputRegion::uniform(x.clone(), eps).unwrap().with_uniform_domain(0.0, 1.0).unwrap();
        let mut cfg = AttackConfig::new(AttackMode::UntargetedInput);
        cfg.steps = 5;
        let r = input_attack(&net, &x, &region, &LossKind::CrossEntropy(0), &AttackGoal::untargeted(1e9), &cfg).unwrap();
        let AdversarialPoint::Input(adv) = &r.point else { panic!("input attack returned a model") };
        let bounds = region.bounds().unwrap();
        prop_assert!(bounds.contains(&adv.clone().reshape(bounds.shape().to_vec()).unwrap(), 0.0));
        prop_assert!(r.objective <= r.trace[0] + SLACK);
        let b = explanation_bounds_in(&net, &region, &ModelRegion::none(), &LossKind::CrossEntropy(0), BoundMethod::ClosedForm).unwrap();
        prop_assert!(b.contains(&r.v_adv, SLACK));
    }

    #[test]
    fn minibatches_partition_the_indices(len in 0usize..200, batch in 1usize..50, seed in any::<u64>()) {
        let batches = minibatches(len, batch, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut all: Vec<usize> = batches.iter().flatten().cloned().collect();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
    }
}
