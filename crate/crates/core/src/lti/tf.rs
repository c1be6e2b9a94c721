use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::{is_hurwitz, Polynomial};
use crate::error::{Error, Result};

/// Number of stored coefficients per polynomial in the fixed-width encoding.
pub const COEFF_WIDTH: usize = 3;

/// Proper rational function `num(s) / den(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Polynomial,
    pub den: Polynomial,
}

impl TransferFunction {
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::InvalidInput("denominator is identically zero".into()));
        }
        if !num.is_zero() && num.degree() > den.degree() {
            return Err(Error::InvalidInput(format!(
                "improper transfer function: deg num {} > deg den {}",
                num.degree(),
                den.degree()
            )));
        }
        Ok(Self { num, den })
    }

    pub fn from_coeffs(num: &[f64], den: &[f64]) -> Result<Self> {
        Self::new(Polynomial::new(num.to_vec())?, Polynomial::new(den.to_vec())?)
    }

    /// Build from the fixed 6-wide encoding `[num(3), den(3)]`.
    pub fn from_coeffs6(c: &[f64]) -> Result<Self> {
        if c.len() != 2 * COEFF_WIDTH {
            return Err(Error::WidthMismatch { expected: 2 * COEFF_WIDTH, got: c.len() });
        }
        Self::from_coeffs(&c[..COEFF_WIDTH], &c[COEFF_WIDTH..])
    }

    /// Fixed 6-wide encoding: numerator and denominator each left-padded to 3.
    pub fn coeffs6(&self) -> Result<[f64; 6]> {
        let n = self.num.padded(COEFF_WIDTH)?;
        let d = self.den.padded(COEFF_WIDTH)?;
        let mut out = [0.0; 6];
        out[..3].copy_from_slice(&n);
        out[3..].copy_from_slice(&d);
        Ok(out)
    }

    pub fn constant(k: f64) -> Self {
        Self { num: Polynomial::constant(k), den: Polynomial::one() }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(is_hurwitz(&self.den)?.is_hurwitz)
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() < self.den.degree()
    }

    /// Value at `s`, without checking for a pole there.
    pub fn eval_s(&self, s: Complex64) -> Complex64 {
        self.num.eval(s) / self.den.eval(s)
    }

    pub fn dc_gain(&self) -> f64 {
        self.num.constant_term() / self.den.constant_term()
    }

    /// Limit of the response as `|s| -> inf` (zero when strictly proper).
    pub fn high_frequency_gain(&self) -> f64 {
        if self.is_strictly_proper() {
            0.0
        } else {
            self.num.leading() / self.den.leading()
        }
    }

    pub fn mul(&self, other: &TransferFunction) -> TransferFunction {
        Self { num: self.num.mul(&other.num), den: self.den.mul(&other.den) }
    }
}

/// Frequency response `num(jw) / den(jw)`.
pub fn tf_eval(tf: &TransferFunction, omega: f64) -> Result<Complex64> {
    let s = Complex64::new(0.0, omega);
    let den = tf.den.eval(s);
    // magnitude of the terms that were summed, to judge cancellation
    let scale: f64 = tf
        .den
        .coeffs()
        .iter()
        .rev()
        .enumerate()
        .map(|(k, c)| c.abs() * omega.abs().powi(k as i32))
        .sum();
    if den.norm() <= 1e-14 * scale {
        return Err(Error::PoleOnAxis(omega));
    }
    Ok(tf.num.eval(s) / den)
}

/// Parse `"num=a,b,c;den=d,e,f"` (descending powers).
impl std::str::FromStr for TransferFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut num = None;
        let mut den = None;
        for part in s.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (key, vals) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected key=values, got {part:?}")))?;
            let coeffs = vals
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad coefficient in {part:?}: {e}")))?;
            match key.trim() {
                "num" => num = Some(coeffs),
                "den" => den = Some(coeffs),
                other => return Err(Error::InvalidInput(format!("unknown key {other:?}"))),
            }
        }
        let num = num.ok_or_else(|| Error::InvalidInput("missing num=".into()))?;
        let den = den.ok_or_else(|| Error::InvalidInput("missing den=".into()))?;
        Self::from_coeffs(&num, &den)
    }
}

impl std::fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let join = |p: &Polynomial| p.coeffs().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "num={};den={}", join(&self.num), join(&self.den))
    }
}
