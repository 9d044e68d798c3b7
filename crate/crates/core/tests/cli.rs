//! End-to-end checks of the `jumpstat` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const DAY: f64 = 1_700_006_400.0;
const OPEN: f64 = 9.5 * 3600.0;

const CONTINUOUS_DAY: &str = r#"
seed = 5
grid = { days = 1.0, sample_seconds = 1.0 }
sv = { beta = 0.16, gamma = 0.5, kappa = 5.0, rho = -0.5 }
"#;

const JUMPY_DAY: &str = r#"
seed = 5
grid = { days = 1.0, sample_seconds = 1.0 }
sv = { beta = 0.04, gamma = 0.5, kappa = 5.0, rho = -0.5 }
jumps = { kind = "poisson", lambda = 1.0, jump_scale = 0.014285714285714285, condition_on_jump = true }
"#;

fn jumpstat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpstat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn result_for<'a>(v: &'a Value, null: &str) -> &'a Value {
    v["results"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["null"] == null)
        .unwrap()
}

#[test]
fn moments_prints_the_constants() {
    let out = jumpstat(&["moments", "--p", "4", "--k", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("m_4 = 3\n"));
    assert!(text.contains("m_8 = 105\n"));
    assert!(text.contains("m_{2,4} = 204\n"));
    let v = json(&jumpstat(&["moments", "--p", "4", "--k", "3", "--json"]));
    assert_eq!(v["m_kp"], 321.0);
    assert!((v["variance_scale"].as_f64().unwrap() - 224.0).abs() < 1e-9);
}

#[test]
fn simulated_days_land_near_their_limits() {
    let dir = tempfile::tempdir().unwrap();
    let cont = write(dir.path(), "cont.toml", CONTINUOUS_DAY);
    let jumpy = write(dir.path(), "jumpy.toml", JUMPY_DAY);
    let c = json(&jumpstat(&["test", "--simulate", &cont, "--alpha", "2.0"]));
    let j = json(&jumpstat(&["test", "--simulate", &jumpy, "--alpha", "1.0"]));
    assert_eq!(c["schema_version"], 1);
    assert_eq!(c["source"]["n_increments"], 23_400);
    let sc = result_for(&c, "no_jumps")["statistic"].as_f64().unwrap();
    let sj = result_for(&j, "jumps")["statistic"].as_f64().unwrap();
    assert!((sc - 2.0).abs() < 0.2, "continuous {sc}");
    assert!((sj - 1.0).abs() < 0.2, "jumpy {sj}");
    assert_eq!(result_for(&c, "jumps")["reject"], true);
    assert_eq!(result_for(&j, "no_jumps")["reject"], true);
}

#[test]
fn output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "jumpy.toml", JUMPY_DAY);
    let a = jumpstat(&["test", "--simulate", &spec, "--seed", "9"]);
    let b = jumpstat(&["test", "--simulate", &spec, "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = jumpstat(&["test", "--simulate", &spec, "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_writes_one_row_per_grid_time() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "five.toml",
        &CONTINUOUS_DAY.replace("sample_seconds = 1.0", "sample_seconds = 5.0"),
    );
    let csv = dir.path().join("path.csv");
    let out = jumpstat(&["simulate", "--spec", &spec, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "time,price,jump_flag");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert!((first[1].parse::<f64>().unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(first[2], "0");
    assert_eq!(lines.count(), 4680);
}

#[test]
fn tick_files_are_cleaned_resampled_and_tested() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "jumpy.toml", JUMPY_DAY);
    let sim = jumpstat(&["simulate", "--spec", &spec]);
    assert!(sim.status.success());
    let mut ticks = String::from("timestamp,price\n");
    for (i, line) in String::from_utf8(sim.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .enumerate()
    {
        let mut cols = line.split(',');
        let t: f64 = cols.next().unwrap().parse().unwrap();
        let price = cols.next().unwrap();
        ticks.push_str(&format!("{},{price}\n", DAY + OPEN + t));
        if i == 100 {
            ticks.push_str(&format!("{},0\n", DAY + OPEN + t + 0.5));
        }
    }
    let input = write(dir.path(), "ticks.csv", &ticks);
    let v = json(&jumpstat(&[
        "test",
        "--input",
        &input,
        "--sample-seconds",
        "1",
        "--alpha",
        "1.0",
    ]));
    assert_eq!(v["source"]["kind"], "ticks");
    assert_eq!(v["source"]["n_increments"], 23_400);
    assert_eq!(v["source"]["rejections"].as_array().unwrap().len(), 1);
    let s = result_for(&v, "jumps")["statistic"].as_f64().unwrap();
    assert!((s - 1.0).abs() < 0.2, "{s}");
}

#[test]
fn experiment_emits_report_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "exp.toml",
        &format!(
            "n_paths = 12\nnulls = [\"no_jumps\"]\n[path]\n{}\n[test]\nalpha = 2.0\n",
            CONTINUOUS_DAY.replace("sample_seconds = 1.0", "sample_seconds = 5.0")
        ),
    );
    let hist = dir.path().join("hist.csv");
    let v = json(&jumpstat(&[
        "experiment",
        "--spec",
        &spec,
        "--threads",
        "2",
        "--histogram",
        hist.to_str().unwrap(),
    ]));
    assert_eq!(v["n_paths"], 12);
    assert_eq!(v["tests"][0]["null"], "no_jumps");
    assert!(hist.exists());
    assert!(dir.path().join("hist.no_jumps.standardized.csv").exists());
    assert!(dir.path().join("hist.json").exists());
}

#[test]
fn bad_invocations_fail_with_nonzero_status() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "cont.toml", CONTINUOUS_DAY);
    // p must exceed 3.
    let out = jumpstat(&["test", "--simulate", &spec, "--p", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    // Unknown field in the spec.
    let bad = write(
        dir.path(),
        "bad.toml",
        &format!("{CONTINUOUS_DAY}\nbogus = 1\n"),
    );
    assert_eq!(
        jumpstat(&["simulate", "--spec", &bad]).status.code(),
        Some(2)
    );
    // Missing input file.
    let missing = jumpstat(&["test", "--input", "/nonexistent/ticks.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    // Neither input nor simulation.
    assert!(!jumpstat(&["test"]).status.success());
    assert!(!jumpstat(&["moments", "--k", "1"]).status.success());
}
