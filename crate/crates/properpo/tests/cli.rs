//! End-to-end checks of the command-line contract: exit codes, payload
//! reproducibility, JSON error reporting, and the metadata sidecar.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_properpo"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to launch binary")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("properpo-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is not valid JSON")
}

#[test]
fn catalog_exits_zero_with_full_payload() {
    let out = run(&["catalog"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["command"], "catalog");
    assert_eq!(v["pass"], true);
    assert_eq!(v["seed"], 0);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["result"].as_array().unwrap().len(), 5);
}

#[test]
fn improper_loss_exits_one_with_witness() {
    let out = run(&["check-proper", "--loss", "alpha", "--beta", "1", "--n", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], false);
    assert_eq!(v["result"]["verdict"], "improper");
    assert!(v["result"]["worst_pair"].is_array());
    assert!(v["result"]["margin"].as_f64().unwrap() < 0.0);
}

#[test]
fn proper_loss_exits_zero() {
    let out = run(&["check-proper", "--loss", "log", "--n", "3", "--resolution", "12"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["pass"], true);
}

#[test]
fn ineligible_choice_function_exits_one() {
    let cfg = scratch("gumbel.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "composite", "psi": {"name": "exp"}, "f": {"name": "gumbel"}}"#,
    )
    .unwrap();
    let out = run(&["composite-build", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("F(0)"), "stderr: {err}");
}

#[test]
fn missing_config_is_usage_error() {
    let out = run(&["lennorm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_json_reports_line_and_column() {
    let cfg = scratch("broken.json");
    std::fs::write(&cfg, "{\n  \"mode\": \"none\",\n").unwrap();
    let out = run(&["lennorm", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("column"), "stderr: {err}");
}

#[test]
fn identical_configs_yield_identical_payload_bytes() {
    let cfg = scratch("lennorm.json");
    std::fs::write(&cfg, r#"{"mode": "is_harmonic", "factors": [0.5, 0.2, 0.8]}"#).unwrap();
    let out1 = scratch("payload1.json");
    let out2 = scratch("payload2.json");
    for path in [&out1, &out2] {
        let out = run(&[
            "lennorm",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let b1 = std::fs::read(&out1).unwrap();
    let b2 = std::fs::read(&out2).unwrap();
    assert_eq!(b1, b2, "payload bytes differ between identical runs");
    let v: serde_json::Value = serde_json::from_slice(&b1).unwrap();
    assert_eq!(v["seed"], 42);
}

#[test]
fn out_flag_writes_payload_and_sidecar() {
    let cfg = scratch("step1.json");
    std::fs::write(
        &cfg,
        r#"{"potential": "neg_entropy", "rewards": [0.2, 0.0, -0.1], "reference": [0.4, 0.3, 0.3]}"#,
    )
    .unwrap();
    let payload = scratch("step1-out.json");
    let out = run(&[
        "solve-step1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        payload.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty(), "payload should go to the file, not stdout");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&payload).unwrap()).unwrap();
    let sol: Vec<f64> = v["result"]["solution"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!((sol.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let meta_path = format!("{}.meta.json", payload.to_str().unwrap());
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&meta_path).unwrap()).unwrap();
    assert_eq!(meta["payload_path"], payload.to_str().unwrap());
    assert!(meta["written_at_unix_ms"].as_u64().unwrap() > 0);
}

#[test]
fn klst_verify_flags_violations_with_exit_one() {
    let table = scratch("cyclic.json");
    std::fs::write(
        &table,
        r#"{
  "states": ["x0"],
  "actions": ["a", "b", "c"],
  "probs": [[[0.5, 0.9, 0.4], [0.1, 0.5, 0.9], [0.6, 0.1, 0.5]]]
}"#,
    )
    .unwrap();
    let out = run(&["klst-verify", "--table", table.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], false);
    assert_eq!(v["result"]["monotonicity"]["pass"], false);
}
