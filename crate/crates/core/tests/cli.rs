use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use gssdecon::distributions::ErrorModel;
use gssdecon::harness::{generate, TruthSkew};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gssdecon"));
    c.env_remove("GSSDECON_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gssdecon")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited by signal")
}

fn write_series(dir: &Path, name: &str, w: &[f64]) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::from("w\n");
    for v in w {
        text.push_str(&format!("{v}\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

fn sample(n: usize, seed: u64, variance: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate(&TruthSkew::Pi1.model(), &ErrorModel::normal(variance).unwrap(), n, &mut rng)
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    names
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn deconvolve_writes_report_and_density() {
    let tmp = TempDir::new().unwrap();
    let input = write_series(tmp.path(), "w.csv", &sample(300, 1, 0.14));
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deconvolve", "--input", s(&input), "--error", "normal", "--error-var", "0.14",
        "--np", "--output-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files_in(&out_dir), ["density.csv", "report.json"]);

    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let cands = report["candidates"].as_array().unwrap();
    assert!(!cands.is_empty());
    assert!(report["omega"].as_f64().unwrap() > 0.0);
    // defaults are resolved in the report so a run can be replayed from it
    let p = &report["settings"]["pipeline"];
    assert_eq!(p["moments"], 5);
    assert_eq!(p["kappa"], 4.0);
    assert!(p["seed"].as_u64().is_some());
    assert_eq!(report["selection"]["criterion"], "phase");

    let density = fs::read_to_string(out_dir.join("density.csv")).unwrap();
    let mut lines = density.lines();
    assert_eq!(lines.next(), Some("x,gss,np"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 401);
    let dx = rows[1][0] - rows[0][0];
    let mass: f64 = rows.iter().map(|r| r[1]).sum::<f64>() * dx;
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    assert!(rows.iter().all(|r| r[1] >= 0.0 && r[2] >= 0.0));
}

#[test]
fn zero_error_variance_runs_as_plain_fit() {
    let tmp = TempDir::new().unwrap();
    let input = write_series(tmp.path(), "w.csv", &sample(300, 2, 0.0));
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deconvolve", "--input", s(&input), "--error", "normal", "--error-var", "0",
        "--output-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["settings"]["error"]["variance"], 0.0);
}

#[test]
fn malformed_csv_exits_2_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("bad.csv");
    fs::write(&input, "w\n0.5\nnot-a-number\n1.2\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deconvolve", "--input", s(&input), "--error", "normal", "--error-var", "0.1",
        "--output-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 2);
    assert!(files_in(&out_dir).is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(code(&run(&["deconvolve", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn config_errors_exit_4() {
    let tmp = TempDir::new().unwrap();
    let input = write_series(tmp.path(), "w.csv", &sample(100, 3, 0.14));
    let base = ["deconvolve", "--input", s(&input), "--output-dir", s(tmp.path())];
    let cases: [&[&str]; 5] = [
        &["--error", "cauchy", "--error-var", "0.1"],
        &["--error", "normal", "--error-var=-1"],
        &["--error", "normal", "--error-var", "0.1", "--select", "minise"],
        &["--error", "normal", "--error-var", "0.1", "--moments", "7"],
        &["--error", "normal", "--error-var", "0.1", "--bandwidth", "silverman"],
    ];
    for extra in cases {
        let args: Vec<&str> = base.iter().chain(extra.iter()).copied().collect();
        let out = run(&args);
        assert_eq!(code(&out), 4, "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(files_in(tmp.path()), ["w.csv"]);

    let out = run(&["--threads", "0", "simulate", "--config", "missing.json"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn estimation_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let input = write_series(tmp.path(), "w.csv", &[0.1, 0.5, -0.2, 1.0, 0.3]);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deconvolve", "--input", s(&input), "--error", "normal", "--error-var", "0.1",
        "--output-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 3);
    assert!(files_in(&out_dir).is_empty());
}

#[test]
fn missing_input_exits_1() {
    let tmp = TempDir::new().unwrap();
    let out = run(&[
        "deconvolve", "--input", s(&tmp.path().join("absent.csv")), "--error", "normal",
        "--error-var", "0.1", "--output-dir", s(tmp.path()),
    ]);
    assert_eq!(code(&out), 1);
}

fn sim_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("sim.json");
    fs::write(&p, body).unwrap();
    p
}

const SMOKE: &str = r#"{
  "scenarios": [{"truth": "pi1", "error": "normal", "nsr": 0.2, "n": 200}],
  "replicates": 1,
  "seed": 5,
  "study": {"kind": "selection"}
}"#;

#[test]
fn single_replicate_smoke_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = sim_config(tmp.path(), SMOKE);
    let out_dir = tmp.path().join("out");
    let start = Instant::now();
    let out = run(&["simulate", "--config", s(&cfg), "--output-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert_eq!(files_in(&out_dir), ["replicates.csv", "summary.json"]);
    let summary: Value = serde_json::from_slice(&fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    let metrics = summary["summaries"][0]["metrics"].as_object().unwrap();
    assert!(metrics.contains_key("mise.phase"));
    assert!(metrics.contains_key("np.plugin"));
    let csv = fs::read_to_string(out_dir.join("replicates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn invalid_simulation_config_exits_4() {
    let tmp = TempDir::new().unwrap();
    let cfg = sim_config(tmp.path(), &SMOKE.replace("0.2", "-0.2"));
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--output-dir", s(tmp.path())])), 4);
    let cfg = sim_config(tmp.path(), &SMOKE.replace("\"pi1\"", "\"pi9\""));
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--output-dir", s(tmp.path())])), 4);
    let cfg = sim_config(tmp.path(), "{ \"scenarios\": [");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--output-dir", s(tmp.path())])), 2);
    assert_eq!(files_in(tmp.path()), ["sim.json"]);
}

fn paired_csv(dir: &Path, rows: usize, extra_column: bool) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = generate(&TruthSkew::Pi1.model(), &ErrorModel::normal(0.0).unwrap(), rows, &mut rng);
    let e = ErrorModel::normal(0.05).unwrap();
    let mut text = String::from(if extra_column { "a,b,c\n" } else { "a,b\n" });
    for xi in x {
        let a = 200.0 + 30.0 * xi + e.sample(&mut rng) * 30.0;
        let b = 10.0 + 2.0 * xi + e.sample(&mut rng) * 2.0;
        if extra_column {
            text.push_str(&format!("{a},{b},1\n"));
        } else {
            text.push_str(&format!("{a},{b}\n"));
        }
    }
    let p = dir.join("pairs.csv");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn ingest_paired_writes_series_and_estimates() {
    let tmp = TempDir::new().unwrap();
    let input = paired_csv(tmp.path(), 400, false);
    let out_dir = tmp.path().join("out");
    let out = run(&["ingest", "--input", s(&input), "--mode", "paired", "--output-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files_in(&out_dir), ["estimates.json", "w.csv"]);
    let series = fs::read_to_string(out_dir.join("w.csv")).unwrap();
    assert_eq!(series.lines().count(), 401);
}

#[test]
fn ingest_wrong_column_count_exits_4() {
    let tmp = TempDir::new().unwrap();
    let input = paired_csv(tmp.path(), 50, true);
    let out_dir = tmp.path().join("out");
    let out = run(&["ingest", "--input", s(&input), "--mode", "paired", "--output-dir", s(&out_dir)]);
    assert_eq!(code(&out), 4);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains('2') && msg.contains("column"), "{msg}");
    assert!(files_in(&out_dir).is_empty());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let input = write_series(tmp.path(), "w.csv", &sample(250, 4, 0.14));
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2", "1"].iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let out = run(&[
            "--threads", threads, "deconvolve", "--input", s(&input), "--error", "normal",
            "--error-var", "0.14", "--select", "random", "--np", "--seed", "17",
            "--output-dir", s(&dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((fs::read(dir.join("report.json")).unwrap(), fs::read(dir.join("density.csv")).unwrap()));
    }
    // the report echoes the input path, which is the same for every run
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}
