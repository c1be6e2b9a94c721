use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ydg_core::dataset::{generate_dataset_with, Dataset};
use ydg_core::diffusion::{fit_model, load_model, save_model, EpsModel, GuidanceConfig, ModelMeta};
use ydg_core::lti::TransferFunction;
use ydg_core::metrics::MetricsVector;
use ydg_core::synth::{
    deviation_csv, draw_test_cases, evaluate_suite, lambda_sweep, noise_seed, responses_csv, suite_csv, sweep_csv,
    synthesize, time_responses, SynthesisResult, TargetPolicy, TestCase,
};
use ydg_core::Error;

use crate::config::{RunConfig, SuiteMode};
use crate::{Common, SuiteArgs, UsageError};

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| fallback.clone()) {
        Some(p) => Ok(p),
        None => Err(UsageError(format!("missing --{name} (and no default in [paths])")).into()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn parse_tf(s: &str, what: &str) -> Result<TransferFunction> {
    s.parse().map_err(|e: Error| UsageError(format!("invalid {what} {s:?}: {e}")).into())
}

fn load_weights(path: &Path) -> Result<(EpsModel, ModelMeta)> {
    load_model(path).with_context(|| format!("loading weights {}", path.display()))
}

pub fn gen_data(common: &Common, n: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    let out = required(out, &cfg.paths.dataset, "out")?;
    let n = n.unwrap_or(cfg.data.n);
    if n == 0 {
        return Err(UsageError("--n must be positive".into()).into());
    }
    let ds = generate_dataset_with(&cfg.sample_config(), &cfg.filters, &cfg.eval, n)?;
    let (data_path, meta_path) = ds.write(&out).with_context(|| format!("writing dataset {}", out.display()))?;
    let c = &ds.meta.counts;
    let d = &c.discarded;
    println!("attempted {}  kept {}  discarded {}", c.attempted, c.kept, d.total());
    println!("  degenerate tracking  {}", d.degenerate_tracking);
    println!("  ||S||_inf too large  {}", d.sinf_too_large);
    println!("  not settled          {}", d.not_settled);
    println!("  settling too slow    {}", d.settle_too_slow);
    println!("  numerical overflow   {}", d.numerical_overflow);
    println!("  outlier trim         {}", d.outlier_trim);
    println!("wrote {} and {}", data_path.display(), meta_path.display());
    Ok(())
}

pub fn train(
    common: &Common,
    data: Option<PathBuf>,
    steps: Option<usize>,
    out: Option<PathBuf>,
    loss_out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let data = required(data, &cfg.paths.dataset, "data")?;
    let out = required(out, &cfg.paths.weights, "out")?;
    let mut tcfg = cfg.train;
    if let Some(s) = steps {
        if s == 0 {
            return Err(UsageError("--steps must be positive".into()).into());
        }
        tcfg.steps = s;
    }
    let ds = Dataset::read(&data).with_context(|| format!("reading dataset {}", data.display()))?;
    let every = (tcfg.steps / 20).max(1);
    let (model, report, meta) = fit_model(&ds, &cfg.schedule, &cfg.guidance, &tcfg, cfg.seed, |step, loss| {
        if step % every == 0 || step + 1 == tcfg.steps {
            eprintln!("step {step:>6}  loss {loss:.5}");
        }
    })?;
    save_model(&out, &model, &meta).with_context(|| format!("writing weights {}", out.display()))?;
    if let Some(p) = loss_out {
        let mut csv = String::from("step,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            csv += &format!("{i},{l}\n");
        }
        emit(Some(&p), &csv)?;
    }
    println!(
        "trained {} steps on {} entries (null token shown {} times); wrote {}",
        tcfg.steps,
        ds.entries.len(),
        report.null_token_count,
        out.display()
    );
    Ok(())
}

fn guidance(cfg: &RunConfig, lambda: Option<f64>, shots: Option<usize>) -> Result<GuidanceConfig> {
    let g = GuidanceConfig {
        lambda: lambda.unwrap_or(cfg.guidance.lambda),
        n_shots: shots.unwrap_or(cfg.guidance.n_shots),
        ..cfg.guidance
    };
    g.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(g)
}

#[allow(clippy::too_many_arguments)]
pub fn synth(
    common: &Common,
    weights: Option<PathBuf>,
    plant: &str,
    target_sinf: f64,
    target_ts: f64,
    lambda: Option<f64>,
    shots: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let g = parse_tf(plant, "plant")?;
    if g.num.degree() > 2 || g.den.degree() > 2 {
        bail!(UsageError("plant must have numerator and denominator degree at most 2".into()));
    }
    match g.is_stable() {
        Ok(true) => {}
        _ => bail!(UsageError(Error::UnstablePlant.to_string())),
    }
    if !(target_sinf.is_finite() && target_ts.is_finite()) {
        bail!(UsageError("targets must be finite".into()));
    }
    let gcfg = guidance(&cfg, lambda, shots)?;
    let weights = required(weights, &cfg.paths.weights, "weights")?;
    let (model, meta) = load_weights(&weights)?;
    let target = MetricsVector::new(target_sinf, target_ts);
    let r = synthesize(&g, target, &model, &meta.dataset, &gcfg, noise_seed(cfg.seed, 0), 0)?;

    println!("plant {}", r.plant);
    println!("target ||S||_inf {}  t_settle {}  lambda {}", target.s_inf, target.t_settle, r.lambda);
    for c in &r.candidates {
        let m = c
            .metrics
            .map(|m| format!("||S||_inf {:.4}  t_settle {:.3}{}", m.s_inf, m.t_settle, if c.settle_penalized { " (penalty)" } else { "" }))
            .unwrap_or_else(|| "not scored".into());
        let ctl = c.c.as_ref().map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "shot {:>2}  {m}  stabilized {}  certified {}  C: {ctl}",
            c.shot, c.stabilized as u8, c.certified as u8
        );
    }
    if let (Some(mean), Some(std)) = (r.mean, r.std) {
        println!("mean ({:.4}, {:.3})  std ({:.4}, {:.3})", mean[0], mean[1], std[0], std[1]);
    }
    println!("success {}", r.success);
    if let Some(p) = out {
        emit(Some(&p), &(serde_json::to_string_pretty(&r)? + "\n"))?;
    }
    Ok(())
}

fn suite_cases(cfg: &RunConfig, args: &SuiteArgs) -> Result<(EpsModel, ModelMeta, Vec<TestCase>)> {
    let weights = required(args.weights.clone(), &cfg.paths.weights, "weights")?;
    let (model, meta) = load_weights(&weights)?;
    let n = args.n_plants.unwrap_or(cfg.suite.n_plants);
    if n == 0 {
        bail!(UsageError("--n-plants must be positive".into()));
    }
    let policy = match args.mode.unwrap_or(cfg.suite.mode) {
        SuiteMode::Dataset => TargetPolicy::Dataset,
        SuiteMode::Fixed => TargetPolicy::Fixed(cfg.suite.fixed_target()),
        SuiteMode::HighPerformance => TargetPolicy::HighPerformance,
    };
    let cases = draw_test_cases(n, policy, &meta.dataset, cfg.seed)?;
    Ok((model, meta, cases))
}

pub fn eval(
    common: &Common,
    args: &SuiteArgs,
    lambda: Option<f64>,
    shots: Option<usize>,
    out: Option<PathBuf>,
    deviations: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let gcfg = guidance(&cfg, lambda, shots)?;
    let (model, meta, cases) = suite_cases(&cfg, args)?;
    let rep = evaluate_suite(&cases, &model, &meta.dataset, &gcfg, noise_seed(cfg.seed, 0))?;
    emit(out.as_deref(), &suite_csv(&rep))?;
    if let Some(p) = deviations {
        emit(Some(&p), &deviation_csv(&rep.failures))?;
    }
    eprintln!(
        "success {}/{} ({:.1}%)  median deviation over failures: ||S||_inf {}  t_settle {}",
        rep.successes,
        rep.outcomes.len(),
        100.0 * rep.success_rate,
        rep.failures.median_sinf.map_or("-".into(), |v| format!("{v:.4}")),
        rep.failures.median_settle.map_or("-".into(), |v| format!("{v:.3}")),
    );
    Ok(())
}

pub fn sweep(
    common: &Common,
    args: &SuiteArgs,
    lambdas: Option<Vec<f64>>,
    shots: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let lambdas = lambdas.unwrap_or_else(|| cfg.suite.lambdas.clone());
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0)) {
        bail!(UsageError("--lambdas must be a non-empty list of non-negative numbers".into()));
    }
    let gcfg = guidance(&cfg, None, shots)?;
    let (model, meta, cases) = suite_cases(&cfg, args)?;
    let reps = lambda_sweep(&cases, &lambdas, &model, &meta.dataset, &gcfg, cfg.seed)?;
    emit(out.as_deref(), &sweep_csv(&reps))
}

pub fn plot_data(report: &Path, reference: Option<&str>, horizon: f64, dt: f64, out: Option<PathBuf>) -> Result<()> {
    if !(dt > 0.0 && horizon >= dt) {
        bail!(UsageError("need 0 < --dt <= --horizon".into()));
    }
    let text = std::fs::read_to_string(report).with_context(|| format!("reading report {}", report.display()))?;
    let r: SynthesisResult = serde_json::from_str(&text).context("parsing synth report")?;
    let mut controllers: Vec<TransferFunction> = r.candidates.iter().filter_map(|c| c.c.clone()).collect();
    if let Some(s) = reference {
        controllers.push(parse_tf(s, "reference controller")?);
    }
    let series = time_responses(&r.plant, &controllers, horizon, dt)?;
    emit(out.as_deref(), &responses_csv(&series))
}
