//! Seeded generation of stable second-order plants and Youla parameters.
//!
//! Every random quantity in the crate comes from a [`Stream`]: a ChaCha8
//! keystream keyed by a 64-bit seed with the 64-bit ChaCha stream id set to
//! a per-item index. Draws for item `k` therefore depend only on
//! `(seed, k)`, never on scheduling or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{Polynomial, TransferFunction};

pub type Stream = ChaCha8Rng;

/// Independent, reproducible substream `index` of `seed`.
pub fn derive_stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mix a textual domain tag into a seed so that unrelated consumers
/// (dataset, training, evaluation) never share substreams.
pub fn domain_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then one splitmix64 round
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Natural frequency range, rad/s (log-uniform).
    pub wn_range: (f64, f64),
    /// Damping ratio range (uniform); values above 1 give real pole pairs.
    pub zeta_range: (f64, f64),
    /// Plant DC gain range (uniform).
    pub gain_range: (f64, f64),
    /// Youla numerator gain range (uniform).
    pub q_gain_range: (f64, f64),
    /// Magnitude of real zeros, rad/s (log-uniform); zeros sit at `-z`.
    pub zero_loc_range: (f64, f64),
    /// Probability that a plant gets one real zero.
    pub p_plant_zero: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            wn_range: (0.5, 5.0),
            zeta_range: (0.3, 1.5),
            gain_range: (0.5, 2.0),
            q_gain_range: (0.1, 3.0),
            zero_loc_range: (0.1, 10.0),
            p_plant_zero: 0.5,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wn_range", self.wn_range),
            ("gain_range", self.gain_range),
            ("q_gain_range", self.q_gain_range),
            ("zero_loc_range", self.zero_loc_range),
            ("zeta_range", self.zeta_range),
        ];
        for (name, (lo, hi)) in positive {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_plant_zero) {
            return Err(Error::InvalidInput(format!("p_plant_zero must be in [0, 1], got {}", self.p_plant_zero)));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Stream, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn log_uniform(rng: &mut Stream, (lo, hi): (f64, f64)) -> f64 {
    uniform(rng, (lo.ln(), hi.ln())).exp()
}

/// Monic `s^2 + 2 zeta wn s + wn^2`.
fn second_order_den(cfg: &SampleConfig, rng: &mut Stream) -> Polynomial {
    let wn = log_uniform(rng, cfg.wn_range);
    let zeta = uniform(rng, cfg.zeta_range);
    Polynomial::new(vec![1.0, 2.0 * zeta * wn, wn * wn]).expect("finite")
}

/// Strictly proper plant `K wn^2 (s/z + 1)^{0|1} / (s^2 + 2 zeta wn s + wn^2)`
/// with DC gain `K`.
pub fn sample_plant(cfg: &SampleConfig, rng: &mut Stream) -> TransferFunction {
    let den = second_order_den(cfg, rng);
    let wn2 = den.constant_term();
    let k = uniform(rng, cfg.gain_range);
    let num = if rng.random_bool(cfg.p_plant_zero) {
        let z = log_uniform(rng, cfg.zero_loc_range);
        vec![0.0, k * wn2 / z, k * wn2]
    } else {
        vec![0.0, 0.0, k * wn2]
    };
    TransferFunction::new(Polynomial::new(num).expect("finite"), den).expect("proper by construction")
}

/// Proper `Q = gain * prod(s + z_i) / (s^2 + 2 zeta wn s + wn^2)` with
/// zero, one or two stable real zeros (equally likely).
pub fn sample_youla(cfg: &SampleConfig, rng: &mut Stream) -> TransferFunction {
    let den = second_order_den(cfg, rng);
    let gain = uniform(rng, cfg.q_gain_range);
    let n_zeros = rng.random_range(0..3usize);
    let mut num = Polynomial::constant(gain);
    for _ in 0..n_zeros {
        let z = log_uniform(rng, cfg.zero_loc_range);
        num = num.mul(&Polynomial::new(vec![1.0, z]).expect("finite"));
    }
    let num = Polynomial::new(num.padded(3).expect("degree <= 2")).expect("finite");
    TransferFunction::new(num, den).expect("proper by construction")
}
