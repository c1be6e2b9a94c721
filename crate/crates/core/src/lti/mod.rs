//! Polynomial and transfer-function algebra, stability tests, and the
//! Youla-Kucera closed loop for stable SISO plants.

mod poly;
mod tf;
mod youla;

pub use poly::{is_hurwitz, poly_roots, Polynomial, StabilityReport, STABILITY_MARGIN};
pub use tf::{tf_eval, TransferFunction, COEFF_WIDTH};
pub use youla::{gang_of_four, youla_controller, GangOfFour};
