//! Training-set generation: sample `(G, Q)`, evaluate the closed loop,
//! discard unrealistic loops, normalize, trim metric outliers, persist.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{gang_of_four, TransferFunction};
use crate::metrics::{hinf_norm_with, settle_of, EvalConfig, MetricsVector};
use crate::sampler::{derive_stream, domain_seed, sample_plant, sample_youla, SampleConfig};

pub const FORMAT_VERSION: &str = "v1";
pub const COND_WIDTH: usize = 8;
pub const X_WIDTH: usize = 6;

/// Below this standard deviation a feature is frozen (passed through).
const FROZEN_STD: f64 = 1e-8;
const ATTEMPT_BLOCK: usize = 1024;
const ACCEPTANCE_WINDOW: usize = 100_000;
const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub apply_log: bool,
    pub mean: f64,
    pub std: f64,
    pub frozen: bool,
}

/// Per-feature `log(1 + v)` (optional) followed by standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: Vec<FeatureStats>,
}

fn log_stage(v: f64, apply_log: bool) -> f64 {
    if apply_log {
        v.ln_1p()
    } else {
        v
    }
}

/// Fit on per-feature columns. Standard deviations are sample (n - 1) values.
pub fn normalize_fit(columns: &[Vec<f64>], apply_log: &[bool]) -> Result<Normalizer> {
    if columns.len() != apply_log.len() {
        return Err(Error::WidthMismatch { expected: columns.len(), got: apply_log.len() });
    }
    let features = columns
        .iter()
        .zip(apply_log)
        .enumerate()
        .map(|(i, (col, &log))| {
            if col.len() < 2 {
                return Err(Error::InvalidInput(format!("feature {i} needs at least 2 samples")));
            }
            let vals: Vec<f64> = col.iter().map(|&v| log_stage(v, log)).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite value in feature {i}")));
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            let frozen = std < FROZEN_STD;
            Ok(FeatureStats { apply_log: log, mean, std: if frozen { 1.0 } else { std }, frozen })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Normalizer { features })
}

impl Normalizer {
    pub fn width(&self) -> usize {
        self.features.len()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.width() {
            return Err(Error::WidthMismatch { expected: self.width(), got: v.len() });
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(self
            .features
            .iter()
            .zip(v)
            .map(|(f, &x)| if f.frozen { x } else { (log_stage(x, f.apply_log) - f.mean) / f.std })
            .collect())
    }

    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(self
            .features
            .iter()
            .zip(z)
            .map(|(f, &x)| {
                if f.frozen {
                    x
                } else {
                    let y = x * f.std + f.mean;
                    if f.apply_log {
                        y.exp_m1()
                    } else {
                        y
                    }
                }
            })
            .collect())
    }
}

pub fn normalize_apply(n: &Normalizer, v: &[f64]) -> Result<Vec<f64>> {
    n.apply(v)
}

pub fn normalize_invert(n: &Normalizer, z: &[f64]) -> Result<Vec<f64>> {
    n.invert(z)
}

/// The three normalizers that map raw quantities to network space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub plant: Normalizer,
    pub metrics: Normalizer,
    pub youla: Normalizer,
}

impl Normalizers {
    /// `[standardized coeff(G), normalized (s_inf, t_settle)]`.
    pub fn cond(&self, g6: &[f64], metrics: MetricsVector) -> Result<Vec<f64>> {
        let mut out = self.plant.apply(g6)?;
        out.extend(self.metrics.apply(&metrics.as_array())?);
        Ok(out)
    }

    pub fn x(&self, q6: &[f64]) -> Result<Vec<f64>> {
        self.youla.apply(q6)
    }

    pub fn q_coeffs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.youla.invert(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub max_sinf: f64,
    pub max_settle: f64,
    pub trim_sigma: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { max_sinf: 2.0, max_settle: 20.0, trim_sigma: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub cond: Vec<f64>,
    pub x: Vec<f64>,
    pub raw_metrics: MetricsVector,
    pub raw_g: Vec<f64>,
    pub raw_q: Vec<f64>,
}

/// Why a sampled pair did not make it into the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardRule {
    DegenerateTracking,
    SinfTooLarge,
    NotSettled,
    SettleTooSlow,
    NumericalOverflow,
    OutlierTrim,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardCounts {
    pub degenerate_tracking: usize,
    pub sinf_too_large: usize,
    pub not_settled: usize,
    pub settle_too_slow: usize,
    pub numerical_overflow: usize,
    pub outlier_trim: usize,
}

impl DiscardCounts {
    fn bump(&mut self, rule: DiscardRule) {
        match rule {
            DiscardRule::DegenerateTracking => self.degenerate_tracking += 1,
            DiscardRule::SinfTooLarge => self.sinf_too_large += 1,
            DiscardRule::NotSettled => self.not_settled += 1,
            DiscardRule::SettleTooSlow => self.settle_too_slow += 1,
            DiscardRule::NumericalOverflow => self.numerical_overflow += 1,
            DiscardRule::OutlierTrim => self.outlier_trim += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.degenerate_tracking
            + self.sinf_too_large
            + self.not_settled
            + self.settle_too_slow
            + self.numerical_overflow
            + self.outlier_trim
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub attempted: usize,
    pub discarded: DiscardCounts,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: String,
    pub sample_config: SampleConfig,
    pub filters: FilterConfig,
    pub eval: EvalConfig,
    pub normalizers: Normalizers,
    /// Sample standard deviation of the raw kept metrics `(s_inf, t_settle)`.
    pub raw_metric_std: [f64; 2],
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub meta: DatasetMeta,
}

/// A pair that passed every rule, in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPair {
    pub g: TransferFunction,
    pub q: TransferFunction,
    pub metrics: MetricsVector,
}

/// Evaluate `(G, Q)` against the filter rules, skipping work as soon as
/// one rule fails. Rules are checked in a fixed order, so each discard is
/// attributed to exactly one rule.
pub fn screen_pair(
    g: &TransferFunction,
    q: &TransferFunction,
    filters: &FilterConfig,
    eval: &EvalConfig,
) -> std::result::Result<MetricsVector, DiscardRule> {
    let gof = gang_of_four(g, q).map_err(|_| DiscardRule::NumericalOverflow)?;
    let dc = gof.t.dc_gain();
    if !(dc.abs() >= eval.min_tracking_gain) {
        return Err(DiscardRule::DegenerateTracking);
    }
    let s_inf = hinf_norm_with(&gof.s, eval.grid_points).map_err(|_| DiscardRule::NumericalOverflow)?;
    if s_inf > filters.max_sinf {
        return Err(DiscardRule::SinfTooLarge);
    }
    let t_settle = match settle_of(&gof.t, eval) {
        Ok(ts) => ts,
        Err(Error::NotSettled) => return Err(DiscardRule::NotSettled),
        Err(Error::DegenerateTracking(_)) => return Err(DiscardRule::DegenerateTracking),
        Err(_) => return Err(DiscardRule::NumericalOverflow),
    };
    if t_settle > filters.max_settle {
        return Err(DiscardRule::SettleTooSlow);
    }
    Ok(MetricsVector { s_inf, t_settle })
}

/// Attempt number `index` of the dataset stream.
pub fn attempt_pair(
    cfg: &SampleConfig,
    filters: &FilterConfig,
    eval: &EvalConfig,
    stream_seed: u64,
    index: u64,
) -> std::result::Result<RawPair, DiscardRule> {
    let mut rng = derive_stream(stream_seed, index);
    let g = sample_plant(cfg, &mut rng);
    let q = sample_youla(cfg, &mut rng);
    let metrics = screen_pair(&g, &q, filters, eval)?;
    Ok(RawPair { g, q, metrics })
}

pub fn generate_dataset(cfg: &SampleConfig, n_target: usize) -> Result<Dataset> {
    generate_dataset_with(cfg, &FilterConfig::default(), &EvalConfig::default(), n_target)
}

pub fn generate_dataset_with(
    cfg: &SampleConfig,
    filters: &FilterConfig,
    eval: &EvalConfig,
    n_target: usize,
) -> Result<Dataset> {
    if n_target == 0 {
        return Err(Error::InvalidInput("n_target must be at least 1".into()));
    }
    cfg.validate()?;
    let stream_seed = domain_seed(cfg.seed, "dataset");

    let mut kept: Vec<RawPair> = Vec::with_capacity(n_target);
    let mut counts = Counts::default();
    let mut recent: std::collections::VecDeque<bool> = std::collections::VecDeque::new();
    let mut recent_kept = 0usize;
    let mut next_index = 0u64;

    'outer: while kept.len() < n_target {
        let block: Vec<_> = (next_index..next_index + ATTEMPT_BLOCK as u64)
            .into_par_iter()
            .map(|i| attempt_pair(cfg, filters, eval, stream_seed, i))
            .collect();
        next_index += ATTEMPT_BLOCK as u64;

        for outcome in block {
            counts.attempted += 1;
            let ok = outcome.is_ok();
            match outcome {
                Ok(pair) => kept.push(pair),
                Err(rule) => counts.discarded.bump(rule),
            }
            recent.push_back(ok);
            recent_kept += ok as usize;
            if recent.len() > ACCEPTANCE_WINDOW {
                recent_kept -= recent.pop_front().unwrap() as usize;
            }
            if kept.len() == n_target {
                break 'outer;
            }
        }
        if recent.len() == ACCEPTANCE_WINDOW && (recent_kept as f64) < MIN_ACCEPTANCE * ACCEPTANCE_WINDOW as f64 {
            return Err(Error::LowAcceptance { kept: recent_kept, window: ACCEPTANCE_WINDOW });
        }
    }

    let coeffs: Vec<([f64; 6], [f64; 6])> = kept
        .iter()
        .map(|p| Ok((p.g.coeffs6()?, p.q.coeffs6()?)))
        .collect::<Result<_>>()?;
    let column = |k: usize, pick: &dyn Fn(usize) -> [f64; 6]| (0..kept.len()).map(|i| pick(i)[k]).collect::<Vec<_>>();
    let g_cols: Vec<Vec<f64>> = (0..6).map(|k| column(k, &|i| coeffs[i].0)).collect();
    let q_cols: Vec<Vec<f64>> = (0..6).map(|k| column(k, &|i| coeffs[i].1)).collect();
    let m_cols: Vec<Vec<f64>> = vec![
        kept.iter().map(|p| p.metrics.s_inf).collect(),
        kept.iter().map(|p| p.metrics.t_settle).collect(),
    ];
    let normalizers = Normalizers {
        plant: normalize_fit(&g_cols, &[false; 6])?,
        metrics: normalize_fit(&m_cols, &[true; 2])?,
        youla: normalize_fit(&q_cols, &[false; 6])?,
    };

    let mut entries = Vec::with_capacity(kept.len());
    for (pair, (g6, q6)) in kept.iter().zip(&coeffs) {
        let cond = normalizers.cond(g6, pair.metrics)?;
        if cond[6..].iter().any(|z| z.abs() > filters.trim_sigma) {
            counts.discarded.bump(DiscardRule::OutlierTrim);
            continue;
        }
        entries.push(DatasetEntry {
            cond,
            x: normalizers.x(q6)?,
            raw_metrics: pair.metrics,
            raw_g: g6.to_vec(),
            raw_q: q6.to_vec(),
        });
    }
    counts.kept = entries.len();
    debug_assert_eq!(counts.kept + counts.discarded.total(), counts.attempted);

    let raw_metric_std = [0, 1].map(|k| {
        let v: Vec<f64> = entries.iter().map(|e| e.raw_metrics.as_array()[k]).collect();
        sample_std(&v)
    });

    Ok(Dataset {
        entries,
        meta: DatasetMeta {
            format_version: FORMAT_VERSION.to_string(),
            sample_config: *cfg,
            filters: *filters,
            eval: *eval,
            normalizers,
            raw_metric_std,
            counts,
        },
    })
}

pub(crate) fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `<stem>.jsonl` and `<stem>.meta.json` for a path given with or without
/// the `.jsonl` extension.
pub fn dataset_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s.strip_suffix(".jsonl").unwrap_or(&s);
    (PathBuf::from(format!("{stem}.jsonl")), PathBuf::from(format!("{stem}.meta.json")))
}

impl Dataset {
    pub fn write(&self, path: &Path) -> Result<(PathBuf, PathBuf)> {
        let (data_path, meta_path) = dataset_paths(path);
        let mut w = BufWriter::new(File::create(&data_path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let mut m = BufWriter::new(File::create(&meta_path)?);
        serde_json::to_writer_pretty(&mut m, &self.meta)?;
        m.write_all(b"\n")?;
        m.flush()?;
        Ok((data_path, meta_path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (data_path, meta_path) = dataset_paths(path);
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(&meta_path)?))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Serde(format!("unsupported dataset format {:?}", meta.format_version)));
        }
        let mut entries = Vec::new();
        for line in BufReader::new(File::open(&data_path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: DatasetEntry = serde_json::from_str(&line)?;
            if e.cond.len() != COND_WIDTH || e.x.len() != X_WIDTH {
                return Err(Error::Serde(format!("bad entry widths: cond {}, x {}", e.cond.len(), e.x.len())));
            }
            entries.push(e);
        }
        Ok(Self { entries, meta })
    }
}
