//! Stabilizing controller synthesis for stable SISO plants with a
//! conditional denoising diffusion model over Youla parameters.
//!
//! The pipeline: sample stable plants `G` and stable proper Youla parameters
//! `Q`, evaluate the closed loop `C = Q / (1 - GQ)`, keep pairs with sane
//! sensitivity peak and settling time, and train an epsilon-prediction MLP
//! conditioned on `(coeff(G), J)`. Guided reverse sampling then proposes `Q`
//! for unseen plants and target metrics; every proposal is forced into
//! RH-infinity, so every returned controller is internally stabilizing.

pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod lti;
pub mod metrics;
pub mod nn;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
