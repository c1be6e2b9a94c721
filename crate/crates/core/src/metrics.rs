//! Closed-loop performance: sensitivity peak and reference-step settling time.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{gang_of_four, is_hurwitz, tf_eval, TransferFunction};

pub const HINF_GRID_POINTS: usize = 2000;
pub const HINF_OMEGA_MIN: f64 = 1e-3;
pub const HINF_OMEGA_MAX: f64 = 1e3;
const HINF_REFINE_TOL: f64 = 1e-6;

pub const SETTLING_BAND: f64 = 0.02;
pub const SIM_HORIZON: f64 = 40.0;
pub const SIM_DT: f64 = 1e-3;
/// Loops with `|T(0)|` below this do not meaningfully track.
pub const MIN_TRACKING_GAIN: f64 = 0.2;

/// The two conditioning metrics: `||S||_inf` and settling time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsVector {
    pub s_inf: f64,
    pub t_settle: f64,
}

impl MetricsVector {
    pub fn new(s_inf: f64, t_settle: f64) -> Self {
        Self { s_inf, t_settle }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.s_inf, self.t_settle]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { s_inf: a[0], t_settle: a[1] }
    }
}

/// Simulation and evaluation settings for [`evaluate_pair_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon: f64,
    pub dt: f64,
    pub band: f64,
    pub min_tracking_gain: f64,
    pub grid_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: SIM_HORIZON,
            dt: SIM_DT,
            band: SETTLING_BAND,
            min_tracking_gain: MIN_TRACKING_GAIN,
            grid_points: HINF_GRID_POINTS,
        }
    }
}

pub fn hinf_norm(s: &TransferFunction) -> Result<f64> {
    hinf_norm_with(s, HINF_GRID_POINTS)
}

/// Peak gain over `w >= 0`: log grid on `[1e-3, 1e3]`, golden-section
/// refinement around the grid maximum, plus the `w = 0` and `w -> inf` limits.
pub fn hinf_norm_with(s: &TransferFunction, grid_points: usize) -> Result<f64> {
    if !is_hurwitz(&s.den)?.is_hurwitz {
        return Err(Error::Unstable);
    }
    let mag = |w: f64| s.eval_s(Complex64::new(0.0, w)).norm();
    let n = grid_points.max(3);
    let (lo, hi) = (HINF_OMEGA_MIN.ln(), HINF_OMEGA_MAX.ln());
    let grid: Vec<f64> = (0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp()).collect();

    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, &w) in grid.iter().enumerate() {
        let m = mag(w);
        if m > best {
            best = m;
            best_k = k;
        }
    }

    let a = grid[best_k.saturating_sub(1)];
    let b = grid[(best_k + 1).min(n - 1)];
    let refined = golden_max(mag, a, b, HINF_REFINE_TOL);

    let peak = best
        .max(refined)
        .max(s.dc_gain().abs())
        .max(s.high_frequency_gain().abs());
    if !peak.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    Ok(peak)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = f(a).max(f(b));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        best = best.max(fc).max(fd);
    }
    best
}

/// Sampled unit-step response on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub dt: f64,
    /// Analytic DC value `T(0)`.
    pub final_value: f64,
}

/// Zero-order-hold discretization of a controllable-canonical realization.
struct DiscreteRealization {
    n: usize,
    phi: Vec<f64>,
    gamma: Vec<f64>,
    c: Vec<f64>,
    d: f64,
}

fn discretize(tf: &TransferFunction, dt: f64) -> Result<DiscreteRealization> {
    let den = tf.den.trimmed();
    let lead = den.coeffs()[0];
    let a: Vec<f64> = den.coeffs().iter().map(|c| c / lead).collect();
    let n = a.len() - 1;
    let mut b = tf.num.scale(1.0 / lead).padded(n + 1)?;

    // split off the direct feedthrough: num = d * den + remainder
    let d = b[0];
    for (bi, ai) in b.iter_mut().zip(a.iter()) {
        *bi -= d * ai;
    }
    if n == 0 {
        return Ok(DiscreteRealization { n, phi: vec![], gamma: vec![], c: vec![], d });
    }

    // states x1..xn with x_{i}' = x_{i+1}, xn' = -a_n x1 - ... - a_1 xn + u
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..n - 1 {
        m[(i, i + 1)] = dt;
    }
    for j in 0..n {
        m[(n - 1, j)] = -a[n - j] * dt;
    }
    m[(n - 1, n)] = dt;
    let e = m.exp();

    let mut phi = vec![0.0; n * n];
    let mut gamma = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            phi[i * n + j] = e[(i, j)];
        }
        gamma[i] = e[(i, n)];
    }
    // y = sum_j b_{n-j} x_{j+1}
    let c: Vec<f64> = (0..n).map(|j| b[n - j]).collect();
    if phi.iter().chain(&gamma).any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow);
    }
    Ok(DiscreteRealization { n, phi, gamma, c, d })
}

/// Unit-step response of `tf` sampled every `dt` on `[0, horizon]`.
pub fn step_response(tf: &TransferFunction, horizon: f64, dt: f64) -> Result<StepResponse> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(Error::InvalidInput(format!("need dt > 0 and horizon >= dt (dt={dt}, horizon={horizon})")));
    }
    let real = discretize(tf, dt)?;
    let steps = (horizon / dt).round() as usize;
    let mut t = Vec::with_capacity(steps + 1);
    let mut y = Vec::with_capacity(steps + 1);
    let n = real.n;
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    for k in 0..=steps {
        let out = real.d + real.c.iter().zip(&x).map(|(c, x)| c * x).sum::<f64>();
        if !out.is_finite() {
            return Err(Error::NumericalOverflow);
        }
        t.push(k as f64 * dt);
        y.push(out);
        for i in 0..n {
            let row = &real.phi[i * n..(i + 1) * n];
            next[i] = row.iter().zip(&x).map(|(p, x)| p * x).sum::<f64>() + real.gamma[i];
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(StepResponse { t, y, dt, final_value: tf.dc_gain() })
}

pub fn settling_time(resp: &StepResponse, band: f64) -> Result<f64> {
    settling_time_with(resp, band, MIN_TRACKING_GAIN)
}

/// Earliest time after which `|y - final| <= band * |final|` holds for the
/// rest of the record, linearly interpolated inside the crossing sample.
pub fn settling_time_with(resp: &StepResponse, band: f64, min_tracking_gain: f64) -> Result<f64> {
    let fv = resp.final_value;
    if !(fv.abs() >= min_tracking_gain) {
        return Err(Error::DegenerateTracking(fv));
    }
    let tol = band * fv.abs();
    let excess = |k: usize| (resp.y[k] - fv).abs() - tol;
    let last_out = (0..resp.y.len()).rev().find(|&k| excess(k) > 0.0);
    match last_out {
        None => Ok(0.0),
        Some(k) if k + 1 == resp.y.len() => Err(Error::NotSettled),
        Some(k) => {
            let (e0, e1) = (excess(k), excess(k + 1));
            let frac = e0 / (e0 - e1);
            Ok(resp.t[k] + frac * (resp.t[k + 1] - resp.t[k]))
        }
    }
}

pub fn evaluate_pair(g: &TransferFunction, q: &TransferFunction) -> Result<MetricsVector> {
    evaluate_pair_with(g, q, &EvalConfig::default())
}

/// `(||S||_inf, settling time of T)` for the loop closed with `C(Q)`.
pub fn evaluate_pair_with(g: &TransferFunction, q: &TransferFunction, cfg: &EvalConfig) -> Result<MetricsVector> {
    let gof = gang_of_four(g, q)?;
    let s_inf = hinf_norm_with(&gof.s, cfg.grid_points)?;
    let t_settle = settle_of(&gof.t, cfg)?;
    Ok(MetricsVector { s_inf, t_settle })
}

/// Settling time of `T`, checking the tracking gain before simulating.
pub(crate) fn settle_of(t: &TransferFunction, cfg: &EvalConfig) -> Result<f64> {
    let dc = t.dc_gain();
    if !(dc.abs() >= cfg.min_tracking_gain) {
        return Err(Error::DegenerateTracking(dc));
    }
    let resp = step_response(t, cfg.horizon, cfg.dt)?;
    settling_time_with(&resp, cfg.band, cfg.min_tracking_gain)
}

/// Magnitude of `tf` at a set of frequencies (used for grid-vs-norm checks).
pub fn magnitudes(tf: &TransferFunction, omegas: &[f64]) -> Result<Vec<f64>> {
    omegas.iter().map(|&w| tf_eval(tf, w).map(|v| v.norm())).collect()
}
