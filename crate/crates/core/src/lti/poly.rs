use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real polynomial in `s`, coefficients in descending powers.
///
/// `coeffs[0]` multiplies the highest power. Leading zeros are allowed in
/// storage (fixed-width encodings pad on the left); [`Polynomial::degree`]
/// reports the effective degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Polynomial {
    type Error = Error;

    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Polynomial::new(coeffs)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidInput("polynomial needs at least one coefficient".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite polynomial coefficient in {coeffs:?}")));
        }
        Ok(Self { coeffs })
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// Monic polynomial with the given roots. Conjugate pairs must both be
    /// present for the result to be real; imaginary residue is dropped.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut acc = vec![Complex64::new(1.0, 0.0)];
        for &r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
            for (i, &a) in acc.iter().enumerate() {
                next[i] += a;
                next[i + 1] -= a * r;
            }
            acc = next;
        }
        Self { coeffs: acc.into_iter().map(|c| c.re).collect() }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficients with exact leading zeros removed (at least one kept).
    pub fn trimmed(&self) -> Polynomial {
        let first = self.coeffs.iter().position(|&c| c != 0.0).unwrap_or(self.coeffs.len() - 1);
        Self { coeffs: self.coeffs[first..].to_vec() }
    }

    pub fn degree(&self) -> usize {
        self.trimmed().coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn leading(&self) -> f64 {
        self.trimmed().coeffs[0]
    }

    /// Coefficient of `s^0`.
    pub fn constant_term(&self) -> f64 {
        *self.coeffs.last().expect("non-empty")
    }

    /// Left-pad with zeros to exactly `width` coefficients.
    pub fn padded(&self, width: usize) -> Result<Vec<f64>> {
        let t = self.trimmed();
        if t.coeffs.len() > width {
            return Err(Error::InvalidInput(format!(
                "degree {} does not fit in {width} coefficients",
                t.coeffs.len() - 1
            )));
        }
        let mut out = vec![0.0; width - t.coeffs.len()];
        out.extend_from_slice(&t.coeffs);
        Ok(out)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        Self { coeffs: self.coeffs.iter().map(|c| c * k).collect() }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self { coeffs: out }.trimmed()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (k, c) in self.coeffs.iter().rev().enumerate() {
            out[n - 1 - k] += c;
        }
        for (k, c) in other.coeffs.iter().rev().enumerate() {
            out[n - 1 - k] += c;
        }
        Self { coeffs: out }.trimmed()
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }
}

/// All complex roots of `p`.
///
/// Degrees 1 and 2 use closed forms (the quadratic in its cancellation-free
/// variant). Higher degrees take the eigenvalues of the companion matrix
/// through a real Schur decomposition, then polish each root with Newton
/// steps that are only kept while they reduce the residual.
///
/// A degree-0 (nonzero constant) input yields an empty root set.
pub fn poly_roots(p: &Polynomial) -> Result<Vec<Complex64>> {
    if p.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let t = p.trimmed();
    let c = &t.coeffs;
    match c.len() - 1 {
        0 => Ok(Vec::new()),
        1 => Ok(vec![Complex64::new(-c[1] / c[0], 0.0)]),
        2 => Ok(quadratic_roots(c[0], c[1], c[2]).to_vec()),
        n => {
            let lead = c[0];
            let mut companion = DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                companion[(0, j)] = -c[j + 1] / lead;
            }
            for i in 1..n {
                companion[(i, i - 1)] = 1.0;
            }
            let eig = companion.complex_eigenvalues();
            let mut roots: Vec<Complex64> = eig.iter().map(|z| polish(&t, Complex64::new(z.re, z.im))).collect();
            symmetrize_conjugates(&mut roots);
            Ok(roots)
        }
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        if q == 0.0 {
            return [Complex64::new(0.0, 0.0); 2];
        }
        [Complex64::new(q / a, 0.0), Complex64::new(c / q, 0.0)]
    } else {
        let re = -b / (2.0 * a);
        let im = ((-disc).sqrt() / (2.0 * a)).abs();
        [Complex64::new(re, im), Complex64::new(re, -im)]
    }
}

fn polish(p: &Polynomial, mut z: Complex64) -> Complex64 {
    let coeffs = p.coeffs();
    let n = coeffs.len() - 1;
    let dp = Polynomial {
        coeffs: coeffs[..n].iter().enumerate().map(|(i, c)| c * (n - i) as f64).collect(),
    };
    let mut res = p.eval(z).norm();
    for _ in 0..4 {
        let d = dp.eval(z);
        if d.norm() == 0.0 || res == 0.0 {
            break;
        }
        let cand = z - p.eval(z) / d;
        let cand_res = p.eval(cand).norm();
        if !(cand_res < res) {
            break;
        }
        z = cand;
        res = cand_res;
    }
    z
}

/// Snap near-real roots onto the real axis.
fn symmetrize_conjugates(roots: &mut [Complex64]) {
    let scale = roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
    for r in roots.iter_mut() {
        if r.im.abs() <= 1e-12 * scale {
            r.im = 0.0;
        }
    }
}

/// Root-location summary used as the RH-infinity membership test.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub roots: Vec<Complex64>,
    pub max_real_part: f64,
    pub is_hurwitz: bool,
}

/// Roots with real part in `[-STABILITY_MARGIN, inf)` count as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

pub fn is_hurwitz(p: &Polynomial) -> Result<StabilityReport> {
    let roots = poly_roots(p)?;
    let max_real_part = roots.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport { is_hurwitz: max_real_part < -STABILITY_MARGIN, max_real_part, roots })
}
