use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use ydg_core::dataset::FilterConfig;
use ydg_core::diffusion::{make_schedule, GuidanceConfig, ScheduleConfig, TrainConfig};
use ydg_core::metrics::{EvalConfig, MetricsVector};
use ydg_core::sampler::SampleConfig;

use crate::UsageError;

/// Experiment configuration read from a TOML file. Every key is optional;
/// missing keys take the defaults below. Unknown keys are rejected.
///
/// ```toml
/// seed = 0
///
/// [data]
/// n = 20000
///
/// [sampler]
/// wn_range = [0.5, 5.0]
/// zeta_range = [0.3, 1.5]
/// gain_range = [0.5, 2.0]
/// q_gain_range = [0.1, 3.0]
/// zero_loc_range = [0.1, 10.0]
/// p_plant_zero = 0.5
///
/// [filters]
/// max_sinf = 2.0
/// max_settle = 20.0
/// trim_sigma = 3.0
///
/// [eval]
/// horizon = 40.0
/// dt = 0.001
/// band = 0.02
/// min_tracking_gain = 0.2
/// grid_points = 2000
///
/// [schedule]
/// steps = 200
/// beta_start = 1e-4
/// beta_end = 0.05
///
/// [train]
/// steps = 20000
/// batch_size = 256
/// final_lr = 1e-5
/// [train.adam]
/// lr = 1e-3
/// beta1 = 0.9
/// beta2 = 0.999
/// eps = 1e-8
///
/// [guidance]
/// lambda = 1.1
/// n_shots = 15
/// cond_drop_p = 0.1
///
/// [suite]
/// n_plants = 200
/// mode = "dataset"          # dataset | fixed | high-performance
/// fixed_target = [1.5, 8.0] # (s_inf, t_settle) for mode = "fixed"
/// lambdas = [0.5, 1.0, 1.1, 2.0, 4.0]
///
/// [paths]
/// dataset = "data/train.jsonl"
/// weights = "model.bin"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub sampler: SamplerSection,
    pub filters: FilterConfig,
    pub eval: EvalConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub suite: SuiteSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            sampler: SamplerSection::default(),
            filters: FilterConfig::default(),
            eval: EvalConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            guidance: GuidanceConfig::default(),
            suite: SuiteSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { n: 20_000 }
    }
}

/// Sampler ranges; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub wn_range: (f64, f64),
    pub zeta_range: (f64, f64),
    pub gain_range: (f64, f64),
    pub q_gain_range: (f64, f64),
    pub zero_loc_range: (f64, f64),
    pub p_plant_zero: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SampleConfig::default();
        Self {
            wn_range: d.wn_range,
            zeta_range: d.zeta_range,
            gain_range: d.gain_range,
            q_gain_range: d.q_gain_range,
            zero_loc_range: d.zero_loc_range,
            p_plant_zero: d.p_plant_zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteMode {
    Dataset,
    Fixed,
    HighPerformance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    pub n_plants: usize,
    pub mode: SuiteMode,
    pub fixed_target: (f64, f64),
    pub lambdas: Vec<f64>,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self {
            n_plants: 200,
            mode: SuiteMode::Dataset,
            fixed_target: (1.5, 8.0),
            lambdas: vec![0.5, 1.0, 1.1, 2.0, 4.0],
        }
    }
}

impl SuiteSection {
    pub fn fixed_target(&self) -> MetricsVector {
        MetricsVector::new(self.fixed_target.0, self.fixed_target.1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults when `path` is `None`; otherwise parse and validate the file.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| UsageError(format!("invalid config {}: {}", p.display(), e.message())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sample_config(&self) -> SampleConfig {
        let s = &self.sampler;
        SampleConfig {
            wn_range: s.wn_range,
            zeta_range: s.zeta_range,
            gain_range: s.gain_range,
            q_gain_range: s.q_gain_range,
            zero_loc_range: s.zero_loc_range,
            p_plant_zero: s.p_plant_zero,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |e: ydg_core::Error| UsageError(format!("invalid config: {e}"));
        self.sample_config().validate().map_err(bad)?;
        self.guidance.validate().map_err(bad)?;
        make_schedule(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end).map_err(bad)?;
        let e = &self.eval;
        let checks = [
            (self.data.n > 0, "data.n must be positive"),
            (self.train.steps > 0, "train.steps must be positive"),
            (self.train.batch_size > 0, "train.batch_size must be positive"),
            (self.train.adam.lr > 0.0, "train.adam.lr must be positive"),
            (
                self.train.final_lr >= 0.0 && self.train.final_lr <= self.train.adam.lr,
                "train.final_lr must lie in [0, train.adam.lr]",
            ),
            (e.dt > 0.0 && e.horizon > e.dt, "eval needs 0 < dt < horizon"),
            (e.band > 0.0 && e.band < 1.0, "eval.band must be in (0, 1)"),
            (e.grid_points >= 2, "eval.grid_points must be at least 2"),
            (self.filters.max_sinf > 0.0 && self.filters.max_settle > 0.0, "filters must be positive"),
            (self.suite.n_plants > 0, "suite.n_plants must be positive"),
            (!self.suite.lambdas.is_empty(), "suite.lambdas must not be empty"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(UsageError(format!("invalid config: {msg}")));
            }
        }
        Ok(())
    }
}
