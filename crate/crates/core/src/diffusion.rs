//! DDPM over standardized Youla coefficients with classifier-free guidance.
//!
//! The noise predictor sees `[x_t (6), cond (8), null flag (1), embed(t) (32)]`.
//! A dropped condition is the zero vector with the null flag set to 1.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetEntry, DatasetMeta, COND_WIDTH, X_WIDTH};
use crate::error::{Error, Result};
use crate::nn::{adam_step, load_weights, rows, save_weights, time_embed, AdamConfig, AdamState, Gradients, Mlp};
use crate::sampler::{derive_stream, domain_seed, Stream};

pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.05;
pub const TIME_EMBED_DIM: usize = 32;
pub const HIDDEN_LAYERS: [usize; 3] = [256, 256, 256];
pub const INPUT_WIDTH: usize = X_WIDTH + COND_WIDTH + 1 + TIME_EMBED_DIM;
/// Rows per gradient chunk. Fixed so that the reduction order, and hence
/// the trained weights, do not depend on the worker count.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
    pub config: ScheduleConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_STEPS, beta_start: DEFAULT_BETA_START, beta_end: DEFAULT_BETA_END }
    }
}

/// Linear betas; `alpha_bar` is the running product of `1 - beta`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidInput(format!(
            "schedule needs T >= 2 and 0 < beta_1 <= beta_T < 1 (T={steps}, {beta_start}..{beta_end})"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    let sigma = beta.iter().map(|b| b.sqrt()).collect();
    Ok(NoiseSchedule { beta, alpha, alpha_bar, sigma, config: ScheduleConfig { steps, beta_start, beta_end } })
}

impl NoiseSchedule {
    pub fn from_config(c: &ScheduleConfig) -> Result<Self> {
        make_schedule(c.steps, c.beta_start, c.beta_end)
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `alpha_bar_t` for 1-based `t`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise` for 1-based `t`.
pub fn q_sample(x0: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    let ab = sched.alpha_bar_at(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub lambda: f64,
    pub n_shots: usize,
    pub cond_drop_p: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { lambda: 1.1, n_shots: 15, cond_drop_p: 0.1 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.n_shots == 0 || self.n_shots > 1 << 16 || !(0.0..1.0).contains(&self.cond_drop_p) {
            return Err(Error::InvalidInput(format!("invalid guidance config {self:?}")));
        }
        Ok(())
    }
}

/// Noise predictor plus the schedule it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsModel {
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    embeddings: Vec<Vec<f64>>,
}

impl EpsModel {
    pub fn new(net: Mlp, schedule: NoiseSchedule) -> Result<Self> {
        if net.input_width() != INPUT_WIDTH || net.output_width() != X_WIDTH {
            return Err(Error::InvalidInput(format!(
                "noise predictor must map {INPUT_WIDTH} -> {X_WIDTH}, got {} -> {}",
                net.input_width(),
                net.output_width()
            )));
        }
        let embeddings = (1..=schedule.steps()).map(|t| time_embed(t, TIME_EMBED_DIM)).collect::<Result<_>>()?;
        Ok(Self { net, schedule, embeddings })
    }

    /// Freshly initialized `47 -> 256 -> 256 -> 256 -> 6` network.
    pub fn init(schedule: NoiseSchedule, rng: &mut Stream) -> Result<Self> {
        let mut sizes = vec![INPUT_WIDTH];
        sizes.extend(HIDDEN_LAYERS);
        sizes.push(X_WIDTH);
        Self::new(Mlp::new(&sizes, rng)?, schedule)
    }

    fn write_row(&self, row: &mut [f64], x: &[f64], cond: Option<&[f64]>, t: usize) {
        row[..X_WIDTH].copy_from_slice(x);
        let c = &mut row[X_WIDTH..X_WIDTH + COND_WIDTH];
        match cond {
            Some(cond) => c.copy_from_slice(cond),
            None => c.fill(0.0),
        }
        row[X_WIDTH + COND_WIDTH] = if cond.is_some() { 0.0 } else { 1.0 };
        row[X_WIDTH + COND_WIDTH + 1..].copy_from_slice(&self.embeddings[t - 1]);
    }

    /// Predicted noise for one input (`cond = None` is the null token).
    pub fn predict_eps(&self, x: &[f64], cond: Option<&[f64]>, t: usize) -> Result<Vec<f64>> {
        let mut input = Array2::zeros((1, INPUT_WIDTH));
        self.write_row(input.row_mut(0).into_slice().expect("contiguous"), x, cond, t);
        Ok(self.net.predict(input.view())?.row(0).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// `adam.lr` is the starting rate; it follows a cosine down to `final_lr`.
    pub adam: AdamConfig,
    pub final_lr: f64,
}

impl TrainConfig {
    /// Learning rate used for the update after `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps.max(1) as f64;
        self.final_lr + 0.5 * (self.adam.lr - self.final_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 20_000, batch_size: 256, adam: AdamConfig::default(), final_lr: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// How many training rows were shown the null token.
    pub null_token_count: usize,
}

impl TrainReport {
    /// Mean loss over a window of steps.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let w = &self.losses[range];
        w.iter().sum::<f64>() / w.len() as f64
    }
}

/// Minibatch epsilon-matching; each row's condition is replaced by the
/// null token with probability `gcfg.cond_drop_p`.
pub fn train(
    data: &[DatasetEntry],
    model: &mut EpsModel,
    gcfg: &GuidanceConfig,
    cfg: &TrainConfig,
    rng: &mut Stream,
) -> Result<TrainReport> {
    train_with_callback(data, model, gcfg, cfg, rng, |_, _| {})
}

pub fn train_with_callback(
    data: &[DatasetEntry],
    model: &mut EpsModel,
    gcfg: &GuidanceConfig,
    cfg: &TrainConfig,
    rng: &mut Stream,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidInput("training needs data and a positive batch size".into()));
    }
    if !(cfg.final_lr >= 0.0 && cfg.final_lr <= cfg.adam.lr) {
        return Err(Error::InvalidInput(format!("final_lr {} must lie in [0, lr]", cfg.final_lr)));
    }
    gcfg.validate()?;
    let steps_t = model.schedule.steps();
    let b = cfg.batch_size;
    let mut adam = AdamState::new(&model.net, cfg.adam);
    let mut report = TrainReport { losses: Vec::with_capacity(cfg.steps), null_token_count: 0 };
    let mut input = Array2::zeros((b, INPUT_WIDTH));
    let mut target = Array2::zeros((b, X_WIDTH));
    let mut noise = [0.0; X_WIDTH];

    for step in 0..cfg.steps {
        for r in 0..b {
            let e = &data[rng.random_range(0..data.len())];
            let t = rng.random_range(1..=steps_t);
            let drop = rng.random_bool(gcfg.cond_drop_p);
            for v in noise.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let xt = q_sample(&e.x, t, &noise, &model.schedule);
            report.null_token_count += drop as usize;
            let cond = (!drop).then_some(e.cond.as_slice());
            model.write_row(input.row_mut(r).into_slice().expect("contiguous"), &xt, cond, t);
            target.row_mut(r).as_slice_mut().expect("contiguous").copy_from_slice(&noise);
        }

        let chunks: Vec<(usize, usize)> = (0..b).step_by(GRAD_CHUNK).map(|s| (s, (s + GRAD_CHUNK).min(b))).collect();
        let net = &model.net;
        let parts: Vec<Result<(f64, Gradients)>> = chunks
            .par_iter()
            .map(|&(s, e)| {
                let x = rows(&input, s, e);
                let (pred, cache) = net.forward(x.view())?;
                let diff = pred - rows(&target, s, e);
                let loss: f64 = diff.iter().map(|d| d * d).sum();
                let grad_out = diff * (2.0 / b as f64);
                Ok((loss, net.backward(&cache, grad_out.view())?))
            })
            .collect();

        let mut total = 0.0;
        let mut grads: Option<Gradients> = None;
        for part in parts {
            let (loss, g) = part?;
            total += loss;
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
        let loss = total / b as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at step {step}")));
        }
        report.losses.push(loss);
        on_step(step, loss);
        adam.config.lr = cfg.lr_at(step);
        adam_step(&mut model.net, grads.as_ref().expect("at least one chunk"), &mut adam)?;
    }
    Ok(report)
}

/// How the two noise predictions are combined at each reverse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Guidance {
    /// `(1 - lambda) eps_u + lambda eps_c`, i.e. `eps_u + lambda (eps_c - eps_u)`.
    Blend(f64),
    ConditionalOnly,
    UnconditionalOnly,
}

/// Guided blend, written so that `lambda = 1` returns `eps_c` and
/// `lambda = 0` returns `eps_u` bit-exactly.
pub fn blend_eps(eps_u: f64, eps_c: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * eps_u + lambda * eps_c
}

/// Reverse diffusion for `streams.len()` independent shots sharing `cond`.
///
/// Each shot draws `x_T` and its per-step noise from its own stream, so a
/// shot's result does not depend on which other shots share the batch.
pub fn sample_batch(
    model: &EpsModel,
    cond: &[f64],
    guidance: Guidance,
    streams: &mut [Stream],
) -> Result<Vec<Vec<f64>>> {
    if cond.len() != COND_WIDTH {
        return Err(Error::WidthMismatch { expected: COND_WIDTH, got: cond.len() });
    }
    let n = streams.len();
    let sched = &model.schedule;
    let mut x: Vec<Vec<f64>> = streams
        .iter_mut()
        .map(|rng| (0..X_WIDTH).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let (uncond_rows, cond_rows) = match guidance {
        Guidance::Blend(_) => (true, true),
        Guidance::ConditionalOnly => (false, true),
        Guidance::UnconditionalOnly => (true, false),
    };
    let per_shot = uncond_rows as usize + cond_rows as usize;
    let mut input = Array2::zeros((n * per_shot, INPUT_WIDTH));

    for t in (1..=sched.steps()).rev() {
        for (i, xi) in x.iter().enumerate() {
            let mut r = 0;
            if uncond_rows {
                model.write_row(input.row_mut(r * n + i).into_slice().expect("contiguous"), xi, None, t);
                r += 1;
            }
            if cond_rows {
                model.write_row(input.row_mut(r * n + i).into_slice().expect("contiguous"), xi, Some(cond), t);
            }
        }
        let eps = model.net.predict(input.view())?;
        let (alpha, alpha_bar, sigma) = (sched.alpha[t - 1], sched.alpha_bar[t - 1], sched.sigma[t - 1]);
        let coef = (1.0 - alpha) / (1.0 - alpha_bar).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        for (i, (xi, rng)) in x.iter_mut().zip(streams.iter_mut()).enumerate() {
            for (d, v) in xi.iter_mut().enumerate() {
                let e = match guidance {
                    Guidance::Blend(lambda) => blend_eps(eps[(i, d)], eps[(n + i, d)], lambda),
                    Guidance::ConditionalOnly | Guidance::UnconditionalOnly => eps[(i, d)],
                };
                *v = inv_sqrt_alpha * (*v - coef * e);
            }
            if t > 1 {
                for v in xi.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sigma * z;
                }
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::SamplerDiverged);
            }
        }
    }
    Ok(x)
}

/// One classifier-free guided sample `x_0` (standardized coordinates).
pub fn sample_cfg(model: &EpsModel, cond: &[f64], gcfg: &GuidanceConfig, rng: &mut Stream) -> Result<Vec<f64>> {
    gcfg.validate()?;
    let mut streams = [rng.clone()];
    let out = sample_batch(model, cond, Guidance::Blend(gcfg.lambda), &mut streams)?;
    *rng = streams[0].clone();
    Ok(out.into_iter().next().expect("one shot"))
}

/// Everything needed to sample and decode from one weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub schedule: ScheduleConfig,
    pub time_embed_dim: usize,
    pub train: TrainConfig,
    pub cond_drop_p: f64,
    pub seed: u64,
    pub dataset: DatasetMeta,
}

/// Initialize and train a model on `dataset`. Weight initialization and
/// minibatch draws come from separate domains of `seed`.
pub fn fit_model(
    dataset: &Dataset,
    schedule: &ScheduleConfig,
    gcfg: &GuidanceConfig,
    cfg: &TrainConfig,
    seed: u64,
    on_step: impl FnMut(usize, f64),
) -> Result<(EpsModel, TrainReport, ModelMeta)> {
    let sched = NoiseSchedule::from_config(schedule)?;
    let mut model = EpsModel::init(sched, &mut derive_stream(domain_seed(seed, "init"), 0))?;
    let mut rng = derive_stream(domain_seed(seed, "train"), 0);
    let report = train_with_callback(&dataset.entries, &mut model, gcfg, cfg, &mut rng, on_step)?;
    let meta = ModelMeta {
        schedule: *schedule,
        time_embed_dim: TIME_EMBED_DIM,
        train: *cfg,
        cond_drop_p: gcfg.cond_drop_p,
        seed,
        dataset: dataset.meta.clone(),
    };
    Ok((model, report, meta))
}

pub fn save_model(path: &Path, model: &EpsModel, meta: &ModelMeta) -> Result<()> {
    save_weights(path, &model.net, serde_json::to_value(meta)?)
}

pub fn load_model(path: &Path) -> Result<(EpsModel, ModelMeta)> {
    let (net, header) = load_weights(path)?;
    let meta: ModelMeta =
        serde_json::from_value(header.meta).map_err(|e| Error::CorruptWeights(format!("bad model metadata: {e}")))?;
    if meta.time_embed_dim != TIME_EMBED_DIM {
        return Err(Error::CorruptWeights(format!("unsupported embedding width {}", meta.time_embed_dim)));
    }
    let schedule = NoiseSchedule::from_config(&meta.schedule)?;
    let model = EpsModel::new(net, schedule).map_err(|e| Error::CorruptWeights(e.to_string()))?;
    Ok((model, meta))
}
