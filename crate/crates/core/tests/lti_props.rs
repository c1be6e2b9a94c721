use num_complex::Complex64;
use proptest::prelude::*;
use ydg_core::lti::{gang_of_four, is_hurwitz, poly_roots, tf_eval, youla_controller, Polynomial, TransferFunction};
use ydg_core::metrics::{hinf_norm, magnitudes};
use ydg_core::sampler::{derive_stream, sample_plant, sample_youla, SampleConfig};

fn root_set() -> impl Strategy<Value = Vec<Complex64>> {
    let real = (-10.0..10.0f64).prop_map(|r| vec![Complex64::new(r, 0.0)]);
    let pair = (-10.0..10.0f64, 0.05..10.0f64)
        .prop_map(|(re, im)| vec![Complex64::new(re, im), Complex64::new(re, -im)]);
    prop::collection::vec(prop_oneof![real, pair], 1..=3).prop_map(|v| v.concat())
}

fn sampled_pair(k: u64) -> (TransferFunction, TransferFunction) {
    let cfg = SampleConfig::default();
    let mut rng = derive_stream(99, k);
    let g = sample_plant(&cfg, &mut rng);
    let q = sample_youla(&cfg, &mut rng);
    (g, q)
}

fn log_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (n - 1) as f64)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn computed_roots_reconstruct_the_polynomial(roots in root_set(), lead in 0.2..5.0f64) {
        let p = Polynomial::from_roots(&roots).scale(lead);
        let found = poly_roots(&p).unwrap();
        prop_assert_eq!(found.len(), roots.len());
        // residual at every computed root, scaled by the polynomial's magnitude there
        for r in &found {
            let mag: f64 = p.coeffs().iter().rev().enumerate().map(|(i, c)| c.abs() * r.norm().powi(i as i32)).sum();
            prop_assert!(p.eval(*r).norm() <= 1e-10 * mag, "root {} residual {}", r, p.eval(*r).norm());
        }
        // Vieta: the monic polynomial of the computed roots matches
        let rebuilt = Polynomial::from_roots(&found).scale(lead);
        let scale: f64 = p.coeffs().iter().map(|c| c.abs()).fold(1.0, f64::max);
        for (a, b) in rebuilt.coeffs().iter().zip(p.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-8 * scale, "{:?} vs {:?}", rebuilt, p);
        }
    }

    #[test]
    fn hurwitz_verdict_matches_root_construction(roots in root_set()) {
        let p = Polynomial::from_roots(&roots);
        let truly_stable = roots.iter().all(|r| r.re < -1e-6);
        let truly_unstable = roots.iter().any(|r| r.re > 1e-6);
        let rep = is_hurwitz(&p).unwrap();
        if truly_stable { prop_assert!(rep.is_hurwitz); }
        if truly_unstable { prop_assert!(!rep.is_hurwitz); }
    }

    #[test]
    fn youla_loop_is_internally_stable(k in 0u64..1_000_000) {
        let (g, q) = sampled_pair(k);
        let gof = gang_of_four(&g, &q).unwrap();
        prop_assert!(gof.is_internally_stable().unwrap());
    }

    #[test]
    fn youla_sensitivity_matches_feedback_formula(k in 0u64..1_000_000) {
        let (g, q) = sampled_pair(k);
        let c = youla_controller(&g, &q).unwrap();
        let gof = gang_of_four(&g, &q).unwrap();
        for w in log_grid(200) {
            let gc = tf_eval(&g, w).unwrap() * c.eval_s(Complex64::new(0.0, w));
            let s_direct = 1.0 / (1.0 + gc);
            let s = tf_eval(&gof.s, w).unwrap();
            let t = tf_eval(&gof.t, w).unwrap();
            prop_assert!((s - s_direct).norm() < 1e-8, "w={} {} vs {}", w, s, s_direct);
            prop_assert!((s + t - 1.0).norm() < 1e-10);
            // GS = G S
            let gs = tf_eval(&gof.gs, w).unwrap();
            prop_assert!((gs - tf_eval(&g, w).unwrap() * s).norm() < 1e-8);
        }
    }

    #[test]
    fn hinf_bounds_every_grid_sample(k in 0u64..1_000_000) {
        let (g, q) = sampled_pair(k);
        let gof = gang_of_four(&g, &q).unwrap();
        let norm = hinf_norm(&gof.s).unwrap();
        let dense = magnitudes(&gof.s, &log_grid(20_000)).unwrap();
        let limits = [gof.s.dc_gain().abs(), gof.s.high_frequency_gain().abs()];
        let peak = dense.iter().chain(&limits).cloned().fold(0.0, f64::max);
        prop_assert!(norm >= peak * (1.0 - 1e-9), "{} < {}", norm, peak);
        prop_assert!(norm <= peak * (1.0 + 1e-4), "{} vs {}", norm, peak);
    }
}

#[test]
fn ten_thousand_pairs_are_stable() {
    let bad = (0..10_000u64)
        .filter(|&k| {
            let (g, q) = sampled_pair(k);
            !gang_of_four(&g, &q).unwrap().is_internally_stable().unwrap()
        })
        .count();
    assert_eq!(bad, 0);
}

#[test]
fn transfer_function_text_round_trip() {
    let (g, q) = sampled_pair(3);
    for tf in [g, q] {
        let back: TransferFunction = tf.to_string().parse().unwrap();
        assert_eq!(back, tf);
    }
}
