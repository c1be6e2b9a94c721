use super::poly::is_hurwitz;
use super::tf::TransferFunction;
use crate::error::{Error, Result};

fn require_stable(g: &TransferFunction, q: &TransferFunction) -> Result<()> {
    if !g.is_stable()? {
        return Err(Error::UnstablePlant);
    }
    if !q.is_stable()? {
        return Err(Error::UnstableYoula);
    }
    Ok(())
}

/// Controller `C = Q / (1 - G Q)` for a stable plant.
///
/// Returned unreduced: `num = numQ * denG`, `den = denQ * denG - numG * numQ`.
/// Only exact leading zeros are trimmed; stable common factors are kept.
pub fn youla_controller(g: &TransferFunction, q: &TransferFunction) -> Result<TransferFunction> {
    require_stable(g, q)?;
    let num = q.num.mul(&g.den);
    let den = q.den.mul(&g.den).sub(&g.num.mul(&q.num));
    if den.is_zero() {
        return Err(Error::SingularYoula);
    }
    TransferFunction::new(num, den)
}

/// The four closed-loop maps of the unity-feedback loop `(G, C(Q))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GangOfFour {
    /// Sensitivity `1 - GQ`.
    pub s: TransferFunction,
    /// Complementary sensitivity `GQ`.
    pub t: TransferFunction,
    /// Control sensitivity `Q`.
    pub cs: TransferFunction,
    /// Load-disturbance sensitivity `G(1 - GQ)`.
    pub gs: TransferFunction,
}

impl GangOfFour {
    pub fn all(&self) -> [&TransferFunction; 4] {
        [&self.s, &self.t, &self.cs, &self.gs]
    }

    /// Internal-stability certificate: every denominator is Hurwitz.
    pub fn is_internally_stable(&self) -> Result<bool> {
        for tf in self.all() {
            if !is_hurwitz(&tf.den)?.is_hurwitz {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn gang_of_four(g: &TransferFunction, q: &TransferFunction) -> Result<GangOfFour> {
    require_stable(g, q)?;
    let den_gq = g.den.mul(&q.den);
    let num_gq = g.num.mul(&q.num);
    let num_s = den_gq.sub(&num_gq);
    let s = TransferFunction::new(num_s.clone(), den_gq.clone())?;
    let t = TransferFunction::new(num_gq, den_gq.clone())?;
    let gs = TransferFunction::new(g.num.mul(&num_s), g.den.mul(&den_gq))?;
    Ok(GangOfFour { s, t, cs: q.clone(), gs })
}
