mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use ydg_core::nn::{adam_step, load_weights, save_weights, AdamConfig, AdamState, Mlp};
use ydg_core::sampler::derive_stream;

#[test]
fn backprop_matches_finite_differences() {
    for seed in 0..20 {
        let err = common::gradcheck_max_rel_err(seed);
        assert!(err < 1e-5, "net {seed}: max relative error {err:e}");
    }
}

fn mse(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let d = net.predict(x.view()).unwrap() - y;
    d.mapv(|v| v * v).mean().unwrap()
}

#[test]
fn adam_decreases_mse_on_a_fixed_regression() {
    let mut rng = derive_stream(5, 0);
    let mut net = Mlp::new(&[2, 16, 16, 1], &mut rng).unwrap();
    let x = Array2::from_shape_fn((64, 2), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((64, 1), |(i, _)| x[(i, 0)] * 0.8 - 0.5 * x[(i, 1)] + 0.3);
    let mut state = AdamState::new(&net, AdamConfig::default());
    let mut prev = mse(&net, &x, &y);
    for step in 0..50 {
        let (pred, cache) = net.forward(x.view()).unwrap();
        let grad_out = (pred - &y) * (2.0 / y.len() as f64);
        let grads = net.backward(&cache, grad_out.view()).unwrap();
        adam_step(&mut net, &grads, &mut state).unwrap();
        let now = mse(&net, &x, &y);
        assert!(now < prev, "step {step}: {now} >= {prev}");
        prev = now;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn weights_round_trip(seed in any::<u64>(), hidden in 1usize..20, depth in 0usize..3) {
        let mut sizes = vec![5];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(3);
        let net = Mlp::new(&sizes, &mut derive_stream(seed, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&path, &net, serde_json::json!({"seed": seed})).unwrap();
        let (back, header) = load_weights(&path).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(header.layer_sizes, sizes);
        let first = std::fs::read(&path).unwrap();
        save_weights(&path, &back, serde_json::json!({"seed": seed})).unwrap();
        prop_assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
