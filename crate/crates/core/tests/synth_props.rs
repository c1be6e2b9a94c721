use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;
use ydg_core::dataset::{generate_dataset, Dataset};
use ydg_core::diffusion::{fit_model, sample_batch, EpsModel, Guidance, GuidanceConfig, ModelMeta, ScheduleConfig, TrainConfig};
use ydg_core::lti::{gang_of_four, is_hurwitz, poly_roots, Polynomial, STABILITY_MARGIN};
use ydg_core::sampler::SampleConfig;
use ydg_core::synth::{
    draw_test_cases, enforce_q_stability, evaluate_suite, lambda_sweep, noise_seed, shot_stream, synthesize,
    TargetPolicy, HIGH_PERF_MAX_SETTLE, HIGH_PERF_MAX_SINF,
};

struct Fixture {
    model: EpsModel,
    meta: ModelMeta,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let ds: Dataset = generate_dataset(&SampleConfig { seed: 4, ..SampleConfig::default() }, 600).unwrap();
        let sched = ScheduleConfig { steps: 50, ..ScheduleConfig::default() };
        let tcfg = TrainConfig { steps: 150, batch_size: 128, ..TrainConfig::default() };
        let (model, _, meta) = fit_model(&ds, &sched, &GuidanceConfig::default(), &tcfg, 4, |_, _| {}).unwrap();
        Fixture { model, meta }
    })
}

#[test]
fn every_candidate_is_certified_and_success_is_reproducible() {
    let f = fixture();
    let cases = draw_test_cases(12, TargetPolicy::Dataset, &f.meta.dataset, 1).unwrap();
    let g = GuidanceConfig::default();
    for case in &cases {
        let r = synthesize(&case.plant, case.target, &f.model, &f.meta.dataset, &g, noise_seed(1, 0), case.index)
            .unwrap();
        assert_eq!(r.candidates.len(), g.n_shots);
        for c in &r.candidates {
            let (Some(q), Some(_)) = (&c.q, &c.c) else { continue };
            assert!(c.certified, "plant {} shot {}", case.index, c.shot);
            assert!(gang_of_four(&case.plant, q).unwrap().is_internally_stable().unwrap());
        }
        assert_eq!(r.recompute_success(), r.success);
        let again = synthesize(&case.plant, case.target, &f.model, &f.meta.dataset, &g, noise_seed(1, 0), case.index)
            .unwrap();
        assert_eq!(again, r);
    }
}

#[test]
fn single_lambda_sweep_matches_direct_suite() {
    let f = fixture();
    let cases = draw_test_cases(6, TargetPolicy::Dataset, &f.meta.dataset, 2).unwrap();
    let g = GuidanceConfig { lambda: 1.7, n_shots: 4, ..GuidanceConfig::default() };
    let sweep = lambda_sweep(&cases, &[1.7], &f.model, &f.meta.dataset, &g, 2).unwrap();
    let direct = evaluate_suite(&cases, &f.model, &f.meta.dataset, &g, noise_seed(2, 0)).unwrap();
    assert_eq!(sweep, vec![direct]);
}

#[test]
fn zero_lambda_shots_equal_unconditional_samples() {
    let f = fixture();
    let case = &draw_test_cases(1, TargetPolicy::Dataset, &f.meta.dataset, 3).unwrap()[0];
    let g = GuidanceConfig { lambda: 0.0, n_shots: 6, ..GuidanceConfig::default() };
    let seed = noise_seed(3, 0);
    let r = synthesize(&case.plant, case.target, &f.model, &f.meta.dataset, &g, seed, case.index).unwrap();
    let cond = f.meta.dataset.normalizers.cond(&case.plant.coeffs6().unwrap(), case.target).unwrap();
    for c in r.candidates.iter().filter(|c| c.resamples == 0) {
        let mut s = [shot_stream(seed, case.index, c.shot)];
        let x = sample_batch(&f.model, &cond, Guidance::UnconditionalOnly, &mut s).unwrap().remove(0);
        assert_eq!(x, c.x0);
        let raw = f.meta.dataset.normalizers.q_coeffs(&x).unwrap();
        assert_eq!(enforce_q_stability(&raw).unwrap().0, c.q.clone().unwrap());
    }
}

#[test]
fn high_performance_targets_respect_bounds() {
    let f = fixture();
    let cases = draw_test_cases(10, TargetPolicy::HighPerformance, &f.meta.dataset, 5).unwrap();
    for c in cases {
        assert!(c.target.s_inf < HIGH_PERF_MAX_SINF && c.target.t_settle < HIGH_PERF_MAX_SETTLE);
        assert!(c.plant.is_stable().unwrap());
    }
}

#[test]
fn unstable_plant_is_rejected() {
    let f = fixture();
    let g = "num=0,0,1;den=1,-1,2".parse().unwrap();
    let err = synthesize(&g, ydg_core::metrics::MetricsVector::new(1.5, 8.0), &f.model, &f.meta.dataset,
        &GuidanceConfig::default(), 0, 0).unwrap_err();
    assert_eq!(err.to_string(), "plant must be open-loop stable");
}

fn quadratic_roots() -> impl Strategy<Value = [Complex64; 2]> {
    let real = (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b)| [Complex64::new(a, 0.0), Complex64::new(b, 0.0)]);
    let pair = (-5.0..5.0f64, 0.1..5.0f64).prop_map(|(re, im)| [Complex64::new(re, im), Complex64::new(re, -im)]);
    prop_oneof![real, pair]
}

proptest! {
    #[test]
    fn reflection_negates_real_parts_and_keeps_imaginary(roots in quadratic_roots(), lead in prop_oneof![-3.0..-0.1f64, 0.1..3.0f64]) {
        let den = Polynomial::from_roots(&roots).scale(lead);
        let mut raw = vec![0.0, 1.0, 2.0];
        raw.extend(den.padded(3).unwrap());
        let (q, flag) = enforce_q_stability(&raw).unwrap();
        prop_assert!(is_hurwitz(&q.den).unwrap().is_hurwitz);
        prop_assert_eq!(q.den.leading(), lead);
        prop_assert_eq!(q.num.coeffs(), &raw[..3]);
        let computed = is_hurwitz(&den).unwrap();
        prop_assert_eq!(flag, !computed.is_hurwitz);
        if flag {
            let mut expected: Vec<Complex64> = computed.roots.iter()
                .map(|r| if r.re >= -STABILITY_MARGIN { Complex64::new(-r.re.abs() - STABILITY_MARGIN, r.im) } else { *r })
                .collect();
            let mut got = poly_roots(&q.den).unwrap();
            let key = |a: &Complex64, b: &Complex64| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im));
            expected.sort_by(key);
            got.sort_by(key);
            for (e, g) in expected.iter().zip(&got) {
                prop_assert!((e - g).norm() < 1e-7 * (1.0 + e.norm()), "{} vs {}", e, g);
                prop_assert!((e.im.abs() - g.im.abs()).abs() < 1e-7 * (1.0 + e.norm()));
            }
        }
    }
}
