//! `ydg`: dataset generation, training, controller synthesis and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::SuiteMode;

/// Invalid usage or configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "ydg",
    version,
    about = "Synthesize stabilizing controllers for SISO LTI plants with a conditional diffusion model over Youla parameters",
    after_help = "Environment:\n  YDG_THREADS  worker thread count (default: all cores)\n\n\
                  Exit codes: 0 success, 1 runtime failure, 2 invalid usage or configuration."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Top-level seed, overrides `seed` in the config [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample plant/Youla pairs, filter them and write a normalized dataset.
    ///
    /// Writes PATH (one JSON entry per line) and PATH with extension
    /// .meta.json (normalizers, filters, discard counts).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of pairs to keep before outlier trimming [default: 20000, or data.n].
        #[arg(long)]
        n: Option<usize>,
        /// Output dataset path [default: paths.dataset].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train the noise predictor on a dataset and write a weights file.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset written by gen-data [default: paths.dataset].
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Optimizer steps [default: 20000, or train.steps].
        #[arg(long)]
        steps: Option<usize>,
        /// Output weights path [default: paths.weights].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Also write the per-step loss trace as CSV (columns: step,loss).
        #[arg(long, value_name = "PATH")]
        loss_out: Option<PathBuf>,
    },
    /// Generate candidate controllers for one plant and performance target.
    ///
    /// Prints one line per candidate; --out writes the full JSON report,
    /// which plot-data reads.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Weights written by train [default: paths.weights].
        #[arg(long, value_name = "PATH")]
        weights: Option<PathBuf>,
        /// Open-loop stable plant as "num=a,b,c;den=d,e,f" (descending powers).
        #[arg(long)]
        plant: String,
        /// Target peak sensitivity ||S||_inf.
        #[arg(long)]
        target_sinf: f64,
        /// Target 2% settling time in seconds.
        #[arg(long)]
        target_ts: f64,
        /// Guidance strength [default: 1.1, or guidance.lambda].
        #[arg(long)]
        lambda: Option<f64>,
        /// Number of candidates [default: 15, or guidance.n_shots].
        #[arg(long)]
        shots: Option<usize>,
        /// Write the JSON report here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Evaluate on unseen plants and print the success rate.
    ///
    /// CSV columns: plant,target_sinf,target_ts,mean_sinf,mean_ts,std_sinf,std_ts,best_sinf,best_ts,success.
    /// Deviation CSV columns: plant,dev_sinf,dev_ts (failed plants only).
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        suite: SuiteArgs,
        /// Guidance strength [default: 1.1, or guidance.lambda].
        #[arg(long)]
        lambda: Option<f64>,
        /// Candidates per plant [default: 15, or guidance.n_shots].
        #[arg(long)]
        shots: Option<usize>,
        /// Per-plant CSV output [default: stdout].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Failure-deviation CSV output.
        #[arg(long, value_name = "PATH")]
        deviations: Option<PathBuf>,
    },
    /// Success rate per guidance strength on a shared set of plants.
    ///
    /// CSV columns: lambda,n_plants,successes,success_rate,median_dev_sinf,median_dev_ts,stabilized_fraction,failed_shots.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        suite: SuiteArgs,
        /// Comma-separated guidance strengths [default: 0.5,1.0,1.1,2.0,4.0, or suite.lambdas].
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Candidates per plant [default: 15, or guidance.n_shots].
        #[arg(long)]
        shots: Option<usize>,
        /// CSV output [default: stdout].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Step and output-disturbance responses for the controllers in a synth report.
    ///
    /// CSV columns: controller,t,step,disturbance. Controller 0..n-1 are the
    /// report candidates in shot order; the reference controller, if given, comes last.
    PlotData {
        /// JSON report written by `synth --out`.
        #[arg(long, value_name = "PATH")]
        report: PathBuf,
        /// Extra reference controller as "num=...;den=..." (any order).
        #[arg(long)]
        reference: Option<String>,
        /// Simulation horizon in seconds.
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        /// Sample interval in seconds.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// CSV output [default: stdout].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SuiteArgs {
    /// Weights written by train [default: paths.weights].
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,
    /// Number of unseen test plants [default: 200, or suite.n_plants].
    #[arg(long)]
    n_plants: Option<usize>,
    /// Target policy: dataset (targets from fresh filtered pairs), fixed
    /// (suite.fixed_target, default 1.5,8), high-performance (||S||_inf < 1.2,
    /// t_settle < 5 s) [default: dataset, or suite.mode].
    #[arg(long, value_enum)]
    mode: Option<SuiteMode>,
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("YDG_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("YDG_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData { common, n, out } => commands::gen_data(&common, n, out),
        Command::Train { common, data, steps, out, loss_out } => commands::train(&common, data, steps, out, loss_out),
        Command::Synth { common, weights, plant, target_sinf, target_ts, lambda, shots, out } => {
            commands::synth(&common, weights, &plant, target_sinf, target_ts, lambda, shots, out)
        }
        Command::Eval { common, suite, lambda, shots, out, deviations } => {
            commands::eval(&common, &suite, lambda, shots, out, deviations)
        }
        Command::Sweep { common, suite, lambdas, shots, out } => commands::sweep(&common, &suite, lambdas, shots, out),
        Command::PlotData { report, reference, horizon, dt, out } => {
            commands::plot_data(&report, reference.as_deref(), horizon, dt, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
