use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn ydg(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ydg"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("YDG_THREADS", n.to_string()),
        None => cmd.env_remove("YDG_THREADS"),
    };
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ydg(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset and model shared by the tests.
struct Artifacts {
    _dir: tempfile::TempDir,
    data: PathBuf,
    weights: PathBuf,
}

fn artifacts() -> &'static Artifacts {
    static A: OnceLock<Artifacts> = OnceLock::new();
    A.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.jsonl");
        let weights = dir.path().join("w.bin");
        ok(&["gen-data", "--n", "400", "--seed", "3", "--out", s(&data)]);
        ok(&["train", "--data", s(&data), "--steps", "60", "--seed", "3", "--out", s(&weights)]);
        Artifacts { _dir: dir, data, weights }
    })
}

#[test]
fn help_documents_every_flag_and_default() {
    let cases: &[(&str, &[&str])] = &[
        ("gen-data", &["--config", "--seed", "--n", "--out"]),
        ("train", &["--config", "--seed", "--data", "--steps", "--out", "--loss-out"]),
        ("synth", &["--weights", "--plant", "--target-sinf", "--target-ts", "--lambda", "--shots", "--out"]),
        ("eval", &["--weights", "--n-plants", "--mode", "--lambda", "--shots", "--out", "--deviations"]),
        ("sweep", &["--weights", "--n-plants", "--mode", "--lambdas", "--shots", "--out"]),
        ("plot-data", &["--report", "--reference", "--horizon", "--dt", "--out"]),
    ];
    for (sub, flags) in cases {
        let help = String::from_utf8(ok(&[sub, "--help"]).stdout).unwrap();
        for f in *flags {
            assert!(help.contains(f), "{sub} --help misses {f}");
        }
        assert!(help.contains("default"), "{sub} --help lists no defaults");
    }
    let synth = String::from_utf8(ok(&["synth", "--help"]).stdout).unwrap();
    assert!(synth.contains("default: 15") && synth.contains("default: 1.1"));
    let sweep = String::from_utf8(ok(&["sweep", "--help"]).stdout).unwrap();
    assert!(sweep.contains("0.5,1.0,1.1,2.0,4.0"));
    let plot = String::from_utf8(ok(&["plot-data", "--help"]).stdout).unwrap();
    assert!(plot.contains("default: 20") && plot.contains("default: 0.01"));
    let top = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    assert!(top.contains("YDG_THREADS"));
}

#[test]
fn gen_data_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in [1, 1, 3].into_iter().enumerate() {
        let out = dir.path().join(format!("d{i}.jsonl"));
        let res = ydg(&["gen-data", "--n", "300", "--seed", "7", "--out", s(&out)], Some(threads));
        assert!(res.status.success());
        let meta = dir.path().join(format!("d{i}.meta.json"));
        outputs.push((std::fs::read(&out).unwrap(), std::fs::read(&meta).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[0].0.iter().filter(|&&b| b == b'\n').count(), 300);
}

#[test]
fn train_and_synth_are_reproducible_across_workers() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let mut weights = Vec::new();
    for threads in [1, 3] {
        let w = dir.path().join(format!("w{threads}.bin"));
        let res = ydg(&["train", "--data", s(&a.data), "--steps", "20", "--seed", "5", "--out", s(&w)], Some(threads));
        assert!(res.status.success());
        weights.push(std::fs::read(&w).unwrap());
    }
    assert_eq!(weights[0], weights[1]);

    let mut reports = Vec::new();
    for threads in [1, 3] {
        let r = dir.path().join(format!("r{threads}.json"));
        let args = [
            "synth", "--weights", s(&a.weights), "--plant", "num=0,0,1;den=1,2,1", "--target-sinf", "1.5",
            "--target-ts", "8", "--out", s(&r),
        ];
        let res = ydg(&args, Some(threads));
        assert!(res.status.success());
        reports.push((std::fs::read(&r).unwrap(), res.stdout));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn synth_lists_fifteen_certified_candidates() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.json");
    let out = ok(&[
        "synth", "--weights", s(&a.weights), "--plant", "num=0,0,1;den=1,2,1", "--target-sinf", "1.5", "--target-ts",
        "8", "--out", s(&r),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("shot")).count(), 15);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&r).unwrap()).unwrap();
    let cands = report["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 15);
    for c in cands {
        if !c["c"].is_null() {
            assert_eq!(c["certified"], true);
        }
    }

    let csv = String::from_utf8(ok(&["plot-data", "--report", s(&r), "--horizon", "2", "--dt", "0.1"]).stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "controller,t,step,disturbance");
    let with_c = cands.iter().filter(|c| !c["c"].is_null()).count();
    assert_eq!(lines.count(), with_c * 21);
}

#[test]
fn sweep_emits_one_row_per_lambda() {
    let a = artifacts();
    let out = ok(&["sweep", "--weights", s(&a.weights), "--n-plants", "3", "--shots", "3", "--lambdas", "0.5,1.0,1.1,2.0,4.0"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("lambda,"));
    assert!(lines[5].starts_with("4,3,"));
}

#[test]
fn eval_high_performance_targets_respect_bounds() {
    let a = artifacts();
    let dir = tempfile::tempdir().unwrap();
    let dev = dir.path().join("dev.csv");
    let out = ok(&[
        "eval", "--weights", s(&a.weights), "--n-plants", "4", "--shots", "3", "--mode", "high-performance",
        "--deviations", s(&dev),
    ]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!(r[1] < 1.2 && r[2] < 5.0, "{r:?}");
    }
    assert!(std::fs::read_to_string(dev).unwrap().starts_with("plant,dev_sinf,dev_ts"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("success"));
}

#[test]
fn invalid_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 1\n[train]\nlearning_rate = 0.1\n").unwrap();
    let out = ydg(&["gen-data", "--config", s(&cfg), "--n", "10", "--out", s(&dir.path().join("d.jsonl"))], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn config_values_are_used_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let data = dir.path().join("d.jsonl");
    std::fs::write(&cfg, format!("seed = 7\n[data]\nn = 120\n[paths]\ndataset = {:?}\n", s(&data))).unwrap();
    ok(&["gen-data", "--config", s(&cfg)]);
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 120);
    ok(&["gen-data", "--config", s(&cfg), "--n", "50"]);
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 50);
}

#[test]
fn bad_inputs_exit_with_documented_codes() {
    let a = artifacts();
    let unstable = ydg(
        &["synth", "--weights", s(&a.weights), "--plant", "num=0,0,1;den=1,-1,2", "--target-sinf", "1.5", "--target-ts", "8"],
        None,
    );
    assert_eq!(unstable.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unstable.stderr).contains("plant must be open-loop stable"));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.bin");
    let out = ydg(
        &["synth", "--weights", s(&missing), "--plant", "num=0,0,1;den=1,2,1", "--target-sinf", "1.5", "--target-ts", "8"],
        None,
    );
    assert_eq!(out.status.code(), Some(1));

    let corrupt = dir.path().join("corrupt.bin");
    let mut bytes = std::fs::read(&a.weights).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    std::fs::write(&corrupt, bytes).unwrap();
    let out = ydg(&["eval", "--weights", s(&corrupt), "--n-plants", "1"], None);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(ydg(&["synth", "--plant", "x"], None).status.code(), Some(2));
    assert_eq!(ydg(&["gen-data", "--n", "5"], Some(0)).status.code(), Some(2));
}
