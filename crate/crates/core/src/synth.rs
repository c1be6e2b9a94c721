//! Controller synthesis from a trained model, plus suite-level evaluation.
//!
//! A generated `x_0` is de-standardized into Youla coefficients, repaired
//! into RH-infinity if needed, turned into `C = Q / (1 - GQ)` and scored on
//! the true closed loop.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{screen_pair, DatasetMeta};
use crate::diffusion::{sample_batch, EpsModel, Guidance, GuidanceConfig};
use crate::error::{Error, Result};
use crate::lti::{gang_of_four, is_hurwitz, youla_controller, Polynomial, TransferFunction, STABILITY_MARGIN};
use crate::metrics::{hinf_norm_with, settle_of, step_response, EvalConfig, MetricsVector};
use crate::sampler::{derive_stream, domain_seed, sample_plant, sample_youla, Stream};

/// Draws allowed after the first one before a shot is given up.
pub const MAX_RESAMPLES: usize = 5;
/// Smallest usable `|leading denominator coefficient|` of a generated `Q`.
pub const MIN_LEADING_COEFF: f64 = 1e-6;
pub const HIGH_PERF_MAX_SINF: f64 = 1.2;
pub const HIGH_PERF_MAX_SETTLE: f64 = 5.0;
/// Pipeline attempts per test plant before giving up on a target policy.
const MAX_CASE_ATTEMPTS: usize = 100_000;

/// Build a stable `Q` from raw coefficients `[num(3), den(3)]`.
///
/// Denominator roots with `Re >= -STABILITY_MARGIN` are moved to
/// `-|Re| - STABILITY_MARGIN` (imaginary part kept) and the denominator is
/// re-expanded with its original leading coefficient. The flag reports
/// whether any root was moved.
pub fn enforce_q_stability(raw: &[f64]) -> Result<(TransferFunction, bool)> {
    if raw.len() != 6 {
        return Err(Error::WidthMismatch { expected: 6, got: raw.len() });
    }
    let num = Polynomial::new(raw[..3].to_vec())?;
    let den = Polynomial::new(raw[3..].to_vec())?;
    if !(raw[3].abs() > MIN_LEADING_COEFF) {
        return Err(Error::DegenerateLeading(raw[3]));
    }
    let report = is_hurwitz(&den)?;
    if report.is_hurwitz {
        return Ok((TransferFunction::new(num, den)?, false));
    }
    let roots: Vec<Complex64> = report
        .roots
        .iter()
        .map(|r| if r.re >= -STABILITY_MARGIN { Complex64::new(-r.re.abs() - STABILITY_MARGIN, r.im) } else { *r })
        .collect();
    let repaired = Polynomial::from_roots(&roots).scale(den.leading());
    if !is_hurwitz(&repaired)?.is_hurwitz {
        return Err(Error::UnstableYoula);
    }
    Ok((TransferFunction::new(num, repaired)?, true))
}

/// Characteristic polynomial `denG denC + numG numC` of the loop `(G, C)`.
/// It is the common denominator of `S`, `T`, `CS` and `GS`, so its being
/// Hurwitz certifies internal stability independently of how `C` was built.
pub fn closed_loop_poly(g: &TransferFunction, c: &TransferFunction) -> Polynomial {
    g.den.mul(&c.den).add(&g.num.mul(&c.num))
}

pub fn certify(g: &TransferFunction, c: &TransferFunction) -> Result<bool> {
    Ok(is_hurwitz(&closed_loop_poly(g, c))?.is_hurwitz)
}

/// `target_i >= mean_i - 2 std_i` for both metrics.
pub fn success_rule(target: MetricsVector, mean: [f64; 2], std: [f64; 2]) -> bool {
    let t = target.as_array();
    (0..2).all(|i| t[i] >= mean[i] - 2.0 * std[i])
}

/// Mean and population standard deviation of each metric.
pub fn metric_moments(ms: &[MetricsVector]) -> Option<([f64; 2], [f64; 2])> {
    if ms.is_empty() {
        return None;
    }
    let n = ms.len() as f64;
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for i in 0..2 {
        mean[i] = ms.iter().map(|m| m.as_array()[i]).sum::<f64>() / n;
        std[i] = (ms.iter().map(|m| (m.as_array()[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt();
    }
    Some((mean, std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub shot: usize,
    /// Sampler output in standardized coordinates (last draw for the shot).
    pub x0: Vec<f64>,
    /// Extra draws taken because a decoded denominator was unusable.
    pub resamples: usize,
    /// `None` when every draw for the shot was unusable.
    pub q: Option<TransferFunction>,
    pub c: Option<TransferFunction>,
    /// Whether root reflection was needed to make `Q` stable.
    pub stabilized: bool,
    /// Closed-loop certificate recomputed from `(G, C)`.
    pub certified: bool,
    pub metrics: Option<MetricsVector>,
    /// Set when the loop did not settle (or barely tracks) and `t_settle`
    /// was replaced by the simulation horizon.
    pub settle_penalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub plant: TransferFunction,
    pub target: MetricsVector,
    pub lambda: f64,
    pub candidates: Vec<Candidate>,
    /// Mean and population std over candidates that could be scored.
    pub mean: Option<[f64; 2]>,
    pub std: Option<[f64; 2]>,
    pub success: bool,
}

impl SynthesisResult {
    pub fn scored(&self) -> Vec<MetricsVector> {
        self.candidates.iter().filter_map(|c| c.metrics).collect()
    }

    /// Re-derive the success flag from the stored candidates.
    pub fn recompute_success(&self) -> bool {
        match metric_moments(&self.scored()) {
            Some((mean, std)) => success_rule(self.target, mean, std),
            None => false,
        }
    }

    /// Candidate closest to meeting the target: least total shortfall
    /// `sum_i max(0, (J_hat_i - J_i) / scale_i)`, first index on ties.
    pub fn best(&self, scale: [f64; 2]) -> Option<&Candidate> {
        let t = self.target.as_array();
        let shortfall = |m: &MetricsVector| -> f64 {
            let a = m.as_array();
            (0..2).map(|i| ((a[i] - t[i]) / scale[i]).max(0.0)).sum()
        };
        let mut best: Option<(&Candidate, f64)> = None;
        for c in &self.candidates {
            if let Some(m) = &c.metrics {
                let s = shortfall(m);
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((c, s));
                }
            }
        }
        best.map(|(c, _)| c)
    }
}

/// Noise stream for one shot of one plant.
pub fn shot_stream(noise_seed: u64, plant_index: u64, shot: usize) -> Stream {
    derive_stream(noise_seed, (plant_index << 16) | shot as u64)
}

/// Seed of noise substream `stream_id` (one per lambda in a sweep).
pub fn noise_seed(seed: u64, stream_id: usize) -> u64 {
    domain_seed(seed, &format!("synth-noise/{stream_id}"))
}

fn score(g: &TransferFunction, q: &TransferFunction, eval: &EvalConfig) -> (Option<MetricsVector>, bool) {
    let Ok(gof) = gang_of_four(g, q) else { return (None, false) };
    let Ok(s_inf) = hinf_norm_with(&gof.s, eval.grid_points) else { return (None, false) };
    match settle_of(&gof.t, eval) {
        Ok(ts) => (Some(MetricsVector::new(s_inf, ts)), false),
        Err(Error::NotSettled | Error::DegenerateTracking(_)) => (Some(MetricsVector::new(s_inf, eval.horizon)), true),
        Err(_) => (None, false),
    }
}

/// Generate `gcfg.n_shots` controllers for plant `g` aiming at `target`.
pub fn synthesize(
    g: &TransferFunction,
    target: MetricsVector,
    model: &EpsModel,
    meta: &DatasetMeta,
    gcfg: &GuidanceConfig,
    noise_seed: u64,
    plant_index: u64,
) -> Result<SynthesisResult> {
    gcfg.validate()?;
    if !g.is_stable()? {
        return Err(Error::UnstablePlant);
    }
    if !(target.s_inf.is_finite() && target.t_settle.is_finite()) {
        return Err(Error::InvalidInput(format!("target must be finite, got {target:?}")));
    }
    let cond = meta.normalizers.cond(&g.coeffs6()?, target)?;
    let n = gcfg.n_shots;
    let mut streams: Vec<Stream> = (0..n).map(|s| shot_stream(noise_seed, plant_index, s)).collect();
    let mut x0s: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut decoded: Vec<Option<(TransferFunction, bool)>> = vec![None; n];
    let mut resamples = vec![0usize; n];
    let mut pending: Vec<usize> = (0..n).collect();

    while !pending.is_empty() {
        let mut batch: Vec<Stream> = pending.iter().map(|&i| streams[i].clone()).collect();
        let xs = sample_batch(model, &cond, Guidance::Blend(gcfg.lambda), &mut batch)?;
        let mut retry = Vec::new();
        for ((&i, x), rng) in pending.iter().zip(xs).zip(batch) {
            streams[i] = rng;
            let attempt = meta.normalizers.q_coeffs(&x).and_then(|raw| enforce_q_stability(&raw));
            x0s[i] = x;
            match attempt {
                Ok(q) => decoded[i] = Some(q),
                Err(_) if resamples[i] < MAX_RESAMPLES => {
                    resamples[i] += 1;
                    retry.push(i);
                }
                Err(_) => {}
            }
        }
        pending = retry;
    }

    let eval = &meta.eval;
    let candidates: Vec<Candidate> = decoded
        .into_par_iter()
        .zip(x0s)
        .zip(resamples)
        .enumerate()
        .map(|(shot, ((dec, x0), resamples))| {
            let mut cand = Candidate {
                shot,
                x0,
                resamples,
                q: None,
                c: None,
                stabilized: false,
                certified: false,
                metrics: None,
                settle_penalized: false,
            };
            let Some((q, stabilized)) = dec else { return cand };
            cand.stabilized = stabilized;
            if let Ok(c) = youla_controller(g, &q) {
                cand.certified = certify(g, &c).unwrap_or(false);
                cand.c = Some(c);
                (cand.metrics, cand.settle_penalized) = score(g, &q, eval);
            }
            cand.q = Some(q);
            cand
        })
        .collect();

    let moments = metric_moments(&candidates.iter().filter_map(|c| c.metrics).collect::<Vec<_>>());
    let success = moments.is_some_and(|(mean, std)| success_rule(target, mean, std));
    Ok(SynthesisResult {
        plant: g.clone(),
        target,
        lambda: gcfg.lambda,
        candidates,
        mean: moments.map(|m| m.0),
        std: moments.map(|m| m.1),
        success,
    })
}

/// Where the per-plant targets of an evaluation suite come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Metrics of a fresh random `(G, Q)` pair that passes the dataset
    /// filters; the plant of that pair is the test plant.
    Dataset,
    /// One target for every plant.
    Fixed(MetricsVector),
    /// Like `Dataset`, restricted to pairs with `s_inf < 1.2`, `t_settle < 5`.
    HighPerformance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub index: u64,
    pub plant: TransferFunction,
    pub target: MetricsVector,
}

/// `n` test plants with targets, drawn from the `"eval-plants"` domain so
/// they never share substreams with the training data.
pub fn draw_test_cases(n: usize, policy: TargetPolicy, meta: &DatasetMeta, seed: u64) -> Result<Vec<TestCase>> {
    let base = domain_seed(seed, "eval-plants");
    let cfg = &meta.sample_config;
    (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = derive_stream(base, index);
            if let TargetPolicy::Fixed(target) = policy {
                return Ok(TestCase { index, plant: sample_plant(cfg, &mut rng), target });
            }
            for _ in 0..MAX_CASE_ATTEMPTS {
                let g = sample_plant(cfg, &mut rng);
                let q = sample_youla(cfg, &mut rng);
                let Ok(m) = screen_pair(&g, &q, &meta.filters, &meta.eval) else { continue };
                if policy == TargetPolicy::HighPerformance
                    && !(m.s_inf < HIGH_PERF_MAX_SINF && m.t_settle < HIGH_PERF_MAX_SETTLE)
                {
                    continue;
                }
                return Ok(TestCase { index, plant: g, target: m });
            }
            Err(Error::LowAcceptance { kept: 0, window: MAX_CASE_ATTEMPTS })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantOutcome {
    pub index: u64,
    pub target: MetricsVector,
    pub mean: Option<[f64; 2]>,
    pub std: Option<[f64; 2]>,
    pub best: Option<MetricsVector>,
    pub success: bool,
    pub stabilized_shots: usize,
    pub failed_shots: usize,
    /// Controllers whose recomputed closed-loop certificate failed.
    pub uncertified_shots: usize,
}

/// Absolute deviations `|J_i - J_hat_best,i|` over failed plants, raw units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureStats {
    pub plants: Vec<u64>,
    pub dev_sinf: Vec<f64>,
    pub dev_settle: Vec<f64>,
    pub median_sinf: Option<f64>,
    pub median_settle: Option<f64>,
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

impl FailureStats {
    pub fn from_outcomes(outcomes: &[PlantOutcome]) -> Self {
        let mut out = FailureStats::default();
        for o in outcomes.iter().filter(|o| !o.success) {
            if let Some(b) = o.best {
                out.plants.push(o.index);
                out.dev_sinf.push((o.target.s_inf - b.s_inf).abs());
                out.dev_settle.push((o.target.t_settle - b.t_settle).abs());
            }
        }
        out.median_sinf = median(&out.dev_sinf);
        out.median_settle = median(&out.dev_settle);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub lambda: f64,
    pub n_shots: usize,
    pub outcomes: Vec<PlantOutcome>,
    pub successes: usize,
    pub success_rate: f64,
    /// Fraction of generated `Q` that needed root reflection.
    pub stabilized_fraction: f64,
    pub failed_shots: usize,
    pub failures: FailureStats,
}

/// Run [`synthesize`] on every test case (in parallel, reduced in order).
pub fn evaluate_suite(
    cases: &[TestCase],
    model: &EpsModel,
    meta: &DatasetMeta,
    gcfg: &GuidanceConfig,
    noise_seed: u64,
) -> Result<SuiteReport> {
    let scale = meta.raw_metric_std;
    let outcomes: Vec<PlantOutcome> = cases
        .par_iter()
        .map(|case| {
            let r = synthesize(&case.plant, case.target, model, meta, gcfg, noise_seed, case.index)?;
            Ok(PlantOutcome {
                index: case.index,
                target: case.target,
                mean: r.mean,
                std: r.std,
                best: r.best(scale).and_then(|c| c.metrics),
                success: r.success,
                stabilized_shots: r.candidates.iter().filter(|c| c.stabilized).count(),
                failed_shots: r.candidates.iter().filter(|c| c.q.is_none()).count(),
                uncertified_shots: r.candidates.iter().filter(|c| c.c.is_some() && !c.certified).count(),
            })
        })
        .collect::<Result<_>>()?;
    let successes = outcomes.iter().filter(|o| o.success).count();
    let generated: usize = outcomes.iter().map(|o| gcfg.n_shots - o.failed_shots).sum();
    let stabilized: usize = outcomes.iter().map(|o| o.stabilized_shots).sum();
    Ok(SuiteReport {
        lambda: gcfg.lambda,
        n_shots: gcfg.n_shots,
        successes,
        success_rate: if outcomes.is_empty() { 0.0 } else { successes as f64 / outcomes.len() as f64 },
        stabilized_fraction: if generated == 0 { 0.0 } else { stabilized as f64 / generated as f64 },
        failed_shots: outcomes.iter().map(|o| o.failed_shots).sum(),
        failures: FailureStats::from_outcomes(&outcomes),
        outcomes,
    })
}

/// One suite per lambda on the same plants; lambda `k` uses noise
/// substream `k`, so the first entry matches `evaluate_suite` with
/// `noise_seed(seed, 0)`.
pub fn lambda_sweep(
    cases: &[TestCase],
    lambdas: &[f64],
    model: &EpsModel,
    meta: &DatasetMeta,
    gcfg: &GuidanceConfig,
    seed: u64,
) -> Result<Vec<SuiteReport>> {
    lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let g = GuidanceConfig { lambda, ..*gcfg };
            evaluate_suite(cases, model, meta, &g, noise_seed(seed, k))
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SUITE_CSV_HEADER: &str =
    "plant,target_sinf,target_ts,mean_sinf,mean_ts,std_sinf,std_ts,best_sinf,best_ts,success";

/// One row per plant.
pub fn suite_csv(report: &SuiteReport) -> String {
    let mut out = format!("{SUITE_CSV_HEADER}\n");
    for o in &report.outcomes {
        out += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            o.index,
            o.target.s_inf,
            o.target.t_settle,
            opt(o.mean.map(|m| m[0])),
            opt(o.mean.map(|m| m[1])),
            opt(o.std.map(|m| m[0])),
            opt(o.std.map(|m| m[1])),
            opt(o.best.map(|m| m.s_inf)),
            opt(o.best.map(|m| m.t_settle)),
            o.success as u8
        );
    }
    out
}

pub const DEVIATION_CSV_HEADER: &str = "plant,dev_sinf,dev_ts";

/// One row per failed plant.
pub fn deviation_csv(stats: &FailureStats) -> String {
    let mut out = format!("{DEVIATION_CSV_HEADER}\n");
    for ((p, a), b) in stats.plants.iter().zip(&stats.dev_sinf).zip(&stats.dev_settle) {
        out += &format!("{p},{a},{b}\n");
    }
    out
}

pub const SWEEP_CSV_HEADER: &str =
    "lambda,n_plants,successes,success_rate,median_dev_sinf,median_dev_ts,stabilized_fraction,failed_shots";

/// One row per lambda.
pub fn sweep_csv(reports: &[SuiteReport]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in reports {
        out += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.lambda,
            r.outcomes.len(),
            r.successes,
            r.success_rate,
            opt(r.failures.median_sinf),
            opt(r.failures.median_settle),
            r.stabilized_fraction,
            r.failed_shots
        );
    }
    out
}

/// Reference-step output (through `T`) and output-disturbance response
/// (through `S`) of one closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSeries {
    pub t: Vec<f64>,
    pub step: Vec<f64>,
    pub disturbance: Vec<f64>,
}

/// Step responses of `T = GC / (1 + GC)` and `S = 1 / (1 + GC)` for each
/// controller.
pub fn time_responses(
    g: &TransferFunction,
    controllers: &[TransferFunction],
    horizon: f64,
    dt: f64,
) -> Result<Vec<ResponseSeries>> {
    controllers
        .iter()
        .map(|c| {
            let den = closed_loop_poly(g, c);
            let t_tf = TransferFunction::new(g.num.mul(&c.num), den.clone())?;
            let s_tf = TransferFunction::new(g.den.mul(&c.den), den)?;
            let step = step_response(&t_tf, horizon, dt)?;
            let dist = step_response(&s_tf, horizon, dt)?;
            Ok(ResponseSeries { t: step.t, step: step.y, disturbance: dist.y })
        })
        .collect()
}

pub const RESPONSE_CSV_HEADER: &str = "controller,t,step,disturbance";

pub fn responses_csv(series: &[ResponseSeries]) -> String {
    let mut out = format!("{RESPONSE_CSV_HEADER}\n");
    for (k, s) in series.iter().enumerate() {
        for i in 0..s.t.len() {
            out += &format!("{k},{},{},{}\n", s.t[i], s.step[i], s.disturbance[i]);
        }
    }
    out
}
