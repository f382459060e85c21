use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FAST: [&str; 6] = ["--count", "4", "--subsample", "10", "--reference-points", "60"];

fn forcelfd(args: &[&str]) -> Output {
    forcelfd_env(args, &[])
}

fn forcelfd_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_forcelfd"));
    cmd.args(args).env_remove("FORCELFD_OUTPUT_ROOT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

#[track_caller]
fn ok(out: Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
}

/// Generates a small compression run and carries it through `last`.
fn small_run(dir: &Path, last: &str) {
    let d = dir.to_str().unwrap();
    let mut args = vec!["generate", "--run-dir", d, "--scenario", "compression"];
    args.extend(FAST);
    ok(forcelfd(&args));
    for stage in ["align", "train", "reproduce", "evaluate"] {
        ok(forcelfd(&[stage, "--run-dir", d]));
        if stage == last {
            break;
        }
    }
}

#[test]
fn generate_writes_split_demonstrations() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = ok(forcelfd(&["generate", "--run-dir", run.to_str().unwrap(), "--scenario", "constant", "--seed", "3"]));
    assert!(out.contains("generated 10 constant demonstrations (5 training, 5 validation)"), "{out}");
    assert_eq!(csv_files(&run.join("demos")).len(), 10);
    let manifest = json(&run.join("demos/manifest.json"));
    assert_eq!(manifest["train"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["validation"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["seed"], 3);
    assert_eq!(json(&run.join("config.json"))["seed"], 3);

    let first: Vec<Vec<u8>> = csv_files(&run.join("demos")).iter().map(|p| fs::read(p).unwrap()).collect();
    ok(forcelfd(&["generate", "--run-dir", run.to_str().unwrap()]));
    let second: Vec<Vec<u8>> = csv_files(&run.join("demos")).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(first, second, "regenerating from the stored config must be identical");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let d = run.to_str().unwrap();
    let out = forcelfd(&["generate", "--run-dir", d, "--count", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("demo count"));
    assert!(!run.join("demos").exists());

    assert_eq!(forcelfd(&["generate", "--run-dir", d, "--via", "0.5:20"]).status.code(), Some(2));
    assert_eq!(forcelfd(&["generate", "--run-dir", d, "--phantom", "phantom-z"]).status.code(), Some(2));
    assert_eq!(forcelfd(&["train", "--frobnicate"]).status.code(), Some(2));
    let out = forcelfd(&["align", "--output-root", tmp.path().join("empty").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no run directory"));

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"demo_cnt": 3}"#).unwrap();
    assert_eq!(forcelfd(&["generate", "--run-dir", d, "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn training_is_deterministic_and_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    small_run(&run, "train");
    let models = run.join("models");
    let before: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&models).unwrap().flatten().map(|e| (e.path(), fs::read(e.path()).unwrap())).collect();
    ok(forcelfd(&["train", "--run-dir", run.to_str().unwrap()]));
    for (path, bytes) in &before {
        assert_eq!(&fs::read(path).unwrap(), bytes, "{}", path.display());
    }
    let diag = json(&models.join("diagnostics.json"));
    assert_eq!(diag["log_likelihood_monotone"], true);
    assert_eq!(diag["reference_points"], 60);
    assert!(diag["kl_diagnostic"].as_f64().unwrap() >= 0.0);
    let ll = fs::read_to_string(models.join("log_likelihood.csv")).unwrap();
    let values: Vec<f64> = ll.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert_eq!(fs::read_to_string(models.join("reference.csv")).unwrap().lines().count(), 61);
}

#[test]
fn corrupt_demonstration_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let d = run.to_str().unwrap();
    let mut args = vec!["generate", "--run-dir", d];
    args.extend(FAST);
    ok(forcelfd(&args));
    let victim = run.join("demos/demo_001.csv");
    let mut text = fs::read_to_string(&victim).unwrap();
    text.push_str("1.0,2.0,not-a-number\n");
    fs::write(&victim, text).unwrap();
    let out = forcelfd(&["align", "--run-dir", d]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("demo_001.csv"), "{}", stderr(&out));
}

#[test]
fn via_points_reach_the_reproduction() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    small_run(&run, "train");
    let d = run.to_str().unwrap();

    let out = ok(forcelfd(&["reproduce", "--run-dir", d, "--via", "0.5:20.0:1e-6"]));
    assert!(out.contains("(1 via-points)"), "{out}");
    let summary = json(&run.join("logs/summary.json"));
    assert_eq!(summary["via_points"][0]["mean"][0], 20.0);
    let profile_at = |s: f64| -> f64 {
        let log = forcelfd_core::control::ScanLog::load(&run.join("logs")).unwrap();
        let r = log.scan_records().min_by(|a, b| (log.progress(a) - s).abs().total_cmp(&(log.progress(b) - s).abs())).unwrap();
        r.target_mean
    };
    assert!((profile_at(0.5) - 20.0).abs() < 0.05);
    assert_eq!(json(&run.join("logs/config.json"))["via_points"][0], "0.5:20:1e-6");

    let out = ok(forcelfd(&["reproduce", "--run-dir", d, "--via", "0.45-0.55:20:1e-6"]));
    let n: usize = json(&run.join("logs/summary.json"))["via_points"].as_array().unwrap().len();
    assert!(n > 1 && out.contains(&format!("({n} via-points)")));

    let out = forcelfd(&["reproduce", "--run-dir", d, "--via", "0.501-0.502:20:1e-6"]);
    assert_eq!(out.status.code(), Some(2), "a range between grid points has nothing to pin");

    let out = ok(forcelfd(&["reproduce", "--run-dir", d]));
    assert!(out.contains("(0 via-points)"), "stored config carries no via-points: {out}");
}

#[test]
fn divergence_keeps_a_partial_log() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    small_run(&run, "train");
    let mut cfg = json(&run.join("config.json"));
    cfg["controller"] = serde_json::json!({
        "mass": [[1e-3, 0.0, 0.0], [0.0, 1e-3, 0.0], [0.0, 0.0, 1e-3]],
        "damping": [[1e-3, 0.0, 0.0], [0.0, 1e-3, 0.0], [0.0, 0.0, 1e-3]],
        "stiffness": [[1e6, 0.0, 0.0], [0.0, 1e6, 0.0], [0.0, 0.0, 0.0]],
        "dt": 0.01
    });
    let path = tmp.path().join("absurd.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = forcelfd(&["reproduce", "--run-dir", run.to_str().unwrap(), "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
    let records = fs::read_to_string(run.join("logs/log.csv")).unwrap().lines().count();
    assert!(records > 1);
    assert!(json(&run.join("logs/summary.json"))["records"].as_u64().unwrap() + 1 == records as u64);
}

#[test]
fn evaluation_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("run-a"), tmp.path().join("run-b"));
    small_run(&a, "evaluate");
    small_run(&b, "evaluate");
    let summary = fs::read_to_string(a.join("reports/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("metric,mean,std"));
    let metrics: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert!(metrics.contains(&"force_rmse") && metrics.contains(&"psnr") && metrics.contains(&"zncc"), "{metrics:?}");
    assert_eq!(fs::read(a.join("reports/summary.csv")).unwrap(), fs::read(b.join("reports/summary.csv")).unwrap());

    let out = ok(forcelfd(&["report", a.to_str().unwrap(), b.to_str().unwrap()]));
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "run,metric,mean,std");
    assert_eq!(rows.len(), 1 + 2 * (summary.lines().count() - 1));
    assert!(rows[1].starts_with("run-a,") && rows.last().unwrap().starts_with("run-b,"));

    let file = tmp.path().join("per_demo.csv");
    ok(forcelfd(&["report", "--output-root", tmp.path().to_str().unwrap(), "--table", "per-demo", "-o", file.to_str().unwrap()]));
    let per_demo = fs::read_to_string(&file).unwrap();
    assert_eq!(per_demo.lines().count(), 1 + 2 * 2, "two validation demos per run:\n{per_demo}");

    let empty = tmp.path().join("nothing");
    assert_eq!(forcelfd(&["report", "--output-root", empty.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn empty_validation_set_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let d = run.to_str().unwrap();
    ok(forcelfd(&["generate", "--run-dir", d, "--count", "1", "--subsample", "10", "--reference-points", "40", "--components", "3"]));
    for stage in ["align", "train", "reproduce"] {
        ok(forcelfd(&[stage, "--run-dir", d]));
    }
    let out = forcelfd(&["evaluate", "--run-dir", d]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("validation set is empty"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let env = [("FORCELFD_OUTPUT_ROOT", root.as_path())];
    let mut args = vec!["generate"];
    args.extend(FAST);
    let out = ok(forcelfd_env(&args, &env));
    let runs: Vec<PathBuf> = fs::read_dir(&root).unwrap().flatten().map(|e| e.path()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("run-") && out.contains(&name), "{name}: {out}");
    // Later stages pick the newest run under the root.
    ok(forcelfd_env(&["align"], &env));
    assert!(runs[0].join("demos/aligned/alignment.json").is_file());
}
