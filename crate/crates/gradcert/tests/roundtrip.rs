use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gradcert::idx::{decode_dataset, encode_images, encode_labels};
use gradcert::model_io::{from_json, load, save, to_json};
use gradcert_core::{Activation, LayerSpec, Network};

fn random_net(seed: u64, hidden: usize, conv: bool) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if conv {
        let specs = [
            LayerSpec::Conv2d { filters: 2, kernel_h: 3, kernel_w: 3, stride: 1, padding: 1, activation: Activation::Relu },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 3, activation: Activation::Identity },
        ];
        Network::init(vec![1, 5, 5], &specs, &mut rng).unwrap()
    } else {
        let specs = [
            LayerSpec::Dense { out_features: hidden, activation: Activation::Softplus },
            LayerSpec::Dense { out_features: 2, activation: Activation::Identity },
        ];
        Network::init(vec![4], &specs, &mut rng).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn model_json_is_value_exact(seed in 0u64..1000, hidden in 1usize..12, conv in any::<bool>()) {
        let net = random_net(seed, hidden, conv);
        let back = from_json(&to_json(&net).unwrap(), "m.json").unwrap();
        prop_assert_eq!(&back, &net);
        // bitwise, not just ==
        for (a, b) in back.parameters().iter().zip(net.parameters()) {
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn idx_pixels_decode_to_byte_over_255(pixels in proptest::collection::vec(any::<u8>(), 6), label in 0u8..10) {
        let ds = decode_dataset(&encode_images(2, 3, &[pixels.clone()]), "i", &encode_labels(&[label]), "l").unwrap();
        prop_assert_eq!(ds.input_shape.clone(), vec![1, 2, 3]);
        for (v, p) in ds.inputs.data().iter().zip(&pixels) {
            prop_assert_eq!(*v, f64::from(*p) / 255.0);
        }
        prop_assert_eq!(ds.labels[0], usize::from(label));
    }
}

#[test]
fn file_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let net = random_net(3, 5, false);
    save(&net, &path).unwrap();
    assert_eq!(load(&path).unwrap(), net);
}

#[test]
fn crafted_two_by_two_image() {
    let ds = decode_dataset(&encode_images(2, 2, &[vec![0, 255, 128, 64]]), "i", &encode_labels(&[7]), "l").unwrap();
    let expected = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
    assert_eq!(ds.inputs.data(), &expected);
    assert!((ds.inputs.data()[2] - 0.50196).abs() < 1e-5);
    assert!((ds.inputs.data()[3] - 0.25098).abs() < 1e-5);
}
