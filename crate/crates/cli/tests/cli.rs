use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bootperc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bootperc"))
        .args(args)
        .env_remove("BOOTPERC_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, v: &Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_config() -> Value {
    json!({
        "schema": 1, "d": 2, "n": 32, "rule": {"standard": {"r": 2}},
        "q": 0.2, "t_horizon": 2, "trials": 40, "master_seed": 99
    })
}

#[test]
fn formulas_print_exact_values() {
    let v = stdout_json(&bootperc(&["formulas", "m", "--d", "2", "--t", "2"]));
    assert_eq!(v["value"], 8);
    assert_eq!(v["leading_order"], false);
    let v = stdout_json(&bootperc(&["formulas", "ell", "--d", "3", "--t", "2"]));
    assert_eq!(v["value"], 7);
    let v = stdout_json(&bootperc(&["formulas", "m-general", "--d", "3", "--t", "2", "--r", "3"]));
    assert_eq!(v["value"], 12);
}

#[test]
fn p_alpha_is_flagged_leading_order() {
    let v = stdout_json(&bootperc(&[
        "formulas", "p-alpha", "--d", "2", "--n", "1000", "--t", "2", "--alpha", "0.5",
    ]));
    assert_eq!(v["leading_order"], true);
    // (ln 2 / (16 · 10⁶))^{1/8}, complemented
    let q = (2f64.ln() / 16e6).powf(1.0 / 8.0);
    assert!((v["value"].as_f64().unwrap() - (1.0 - q)).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bootperc(&["formulas", "m", "--d", "2"]).status.code(), Some(2));
    assert_eq!(bootperc(&["nonsense"]).status.code(), Some(2));
    let out = bootperc(&["formulas", "p-alpha", "--d", "2", "--n", "10", "--t", "1", "--alpha", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extremal_min_writes_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("min");
    let v = stdout_json(&bootperc(&["extremal", "min", "--d", "2", "--t", "2", "--out", out.to_str().unwrap()]));
    assert_eq!(v["size"], 8);
    assert_eq!(v["count"], 16);
    assert_eq!(v["other"], 0);
    let certs: Vec<Value> = serde_json::from_str(&fs::read_to_string(out.join("certificates.json")).unwrap()).unwrap();
    assert_eq!(certs.len(), 16);
    assert!(certs.iter().all(|c| c["classification"]["kind"] != "other"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().nth(1), Some("2,2,standard-r2,8,16,4,12,0"));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn modified_rule_minimum_is_a_line() {
    let v = stdout_json(&bootperc(&["extremal", "min", "--d", "2", "--t", "3", "--rule", "modified"]));
    assert_eq!(v["size"], 7);
    assert_eq!(v["count"], 2);
}

#[test]
fn budget_refusal_exits_3() {
    let out = bootperc(&["extremal", "min", "--d", "3", "--t", "5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
    let out = bootperc(&["extremal", "rho1", "--d", "2", "--t", "2", "--budget", "10"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn joint_rejects_distant_offset() {
    let out = bootperc(&["extremal", "joint", "--d", "2", "--t", "1", "--offset=4,0"]);
    assert_eq!(out.status.code(), Some(2));
    let v = stdout_json(&bootperc(&["extremal", "joint", "--d", "2", "--t", "1", "--offset=-1,0"]));
    assert_eq!(v["union_size"], 8);
}

#[test]
fn experiment_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    stdout_json(&bootperc(&["--threads", "1", "experiment", "--config", &cfg, "--out", a.to_str().unwrap()]));
    stdout_json(&bootperc(&["--threads", "4", "experiment", "--config", &cfg, "--out", b.to_str().unwrap()]));
    for f in ["T_hist.csv", "F_hist.csv", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let t = fs::read_to_string(a.join("T_hist.csv")).unwrap();
    assert_eq!(t.lines().next(), Some("outcome,count"));
    let total: u64 = t
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 40);
}

#[test]
fn experiment_schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["trials"] = json!(0);
    let path = write_config(dir.path(), &cfg);
    let out = bootperc(&["experiment", "--config", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials"));

    let mut cfg = small_config();
    cfg["n"] = json!(4);
    let path = write_config(dir.path(), &cfg);
    let out = bootperc(&["experiment", "--config", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replay_reproduces_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let run = dir.path().join("run");
    stdout_json(&bootperc(&["experiment", "--config", &cfg, "--out", run.to_str().unwrap()]));
    let manifest = run.join("manifest.json");
    let v = stdout_json(&bootperc(&["--threads", "2", "replay", manifest.to_str().unwrap()]));
    assert_eq!(v["mismatched"], json!([]));

    // Tampering with a recorded output must be caught.
    fs::write(run.join("T_hist.csv"), "outcome,count\n").unwrap();
    let out = bootperc(&["replay", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_trajectory_ends_full() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let v = stdout_json(&bootperc(&[
        "simulate", "--d", "2", "--n", "32", "--q", "0.2", "--seed", "5", "--out", out.to_str().unwrap(),
    ]));
    let traj = v["uninfected_by_time"].as_array().unwrap();
    assert_eq!(traj.last().unwrap(), 0);
    assert!(traj.windows(2).all(|w| w[0].as_u64() >= w[1].as_u64()));
    let replay = stdout_json(&bootperc(&["replay", out.join("manifest.json").to_str().unwrap()]));
    assert_eq!(replay["mismatched"], json!([]));
}

#[test]
fn verify_formulas_passes() {
    let out = bootperc(&["verify", "formulas"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[PASS] criterion  6"));
}
