//! End-to-end checks of the command-line interface: exit codes, output
//! files, and byte determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_voltflex")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("voltflex_cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
            "controller": "tracking",
            "horizon_steps": 4,
            "population": {"count": 20},
            "seed": 5
        }"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("VOLTFLEX_OUT_DIR")
        .output()
        .unwrap()
}

#[test]
fn simulate_writes_outputs_and_exit_zero() {
    let dir = tmp("simulate");
    let cfg = write_tiny_config(&dir);
    let out_dir = dir.join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["results.jsonl", "summary.csv", "plot.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    // summary parses and has exactly one data row
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(summary.as_bytes());
    assert_eq!(rdr.records().count(), 1);
    // four JSONL records, one per step
    let lines = std::fs::read_to_string(out_dir.join("results.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("min_voltage").is_some());
    }
}

#[test]
fn simulate_same_seed_byte_identical() {
    let dir = tmp("determinism");
    let cfg = write_tiny_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for f in ["results.jsonl", "summary.csv", "plot.csv"] {
        let a = std::fs::read(out_a.join(f)).unwrap();
        let b = std::fs::read(out_b.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn simulate_missing_reference_exits_2_without_partial_outputs() {
    let dir = tmp("missing_ref");
    let cfg_path = dir.join("config.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "controller": "tracking",
            "horizon_steps": 4,
            "population": {"count": 20},
            "reference": {"source": {"file": "/nonexistent/ref.csv"}}
        }"#,
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!out_dir.join("results.jsonl").exists());
    assert!(!out_dir.join("summary.csv").exists());
}

#[test]
fn simulate_missing_config_exits_2() {
    let out = run(&[
        "simulate",
        "--config",
        "/no/such/config.json",
        "--out",
        "/tmp",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_dir_env_var_is_honored() {
    let dir = tmp("envvar");
    let cfg = write_tiny_config(&dir);
    let out_dir = dir.join("from_env");
    let out = Command::new(bin())
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("VOLTFLEX_OUT_DIR", out_dir.to_str().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out_dir.join("summary.csv").exists());
}

#[test]
fn compare_requires_seeds() {
    let dir = tmp("compare_noseeds");
    let cfg = write_tiny_config(&dir);
    let out = run(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_emits_four_controller_rows() {
    let dir = tmp("compare");
    // keep the proposed runs cheap: tiny fleet, tiny sample budget
    let cfg_path = dir.join("config.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "horizon_steps": 3,
            "population": {"count": 20},
            "safety": {"epsilon": 0.05, "beta": 0.01, "max_samples": 24000, "batch_size": 4000}
        }"#,
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = run(&[
        "compare",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seeds",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(table.as_bytes());
    let names: Vec<String> = rdr
        .records()
        .map(|r| r.unwrap().get(0).unwrap().to_string())
        .collect();
    assert_eq!(
        names,
        vec!["tracking", "opf", "proposed-eps0.05", "proposed-eps0.02"]
    );

    // --check wires the ordering assertions to the exit code; a three-step
    // unstressed run may legitimately fail them, but never crash
    let checked = run(&[
        "compare",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seeds",
        "7",
        "--check",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(matches!(checked.status.code(), Some(0) | Some(1)));
}

#[test]
fn safety_curve_rows_and_validation() {
    let dir = tmp("curve");
    let cfg = write_tiny_config(&dir);
    let out_dir = dir.join("out");
    let ok = run(&[
        "safety-curve",
        "--config",
        cfg.to_str().unwrap(),
        "--points",
        "2",
        "--samples",
        "500",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        ok.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let text = std::fs::read_to_string(out_dir.join("safety_curve.csv")).unwrap();
    assert_eq!(text.lines().count(), 3); // header + 2 points
    let zero = run(&[
        "safety-curve",
        "--config",
        cfg.to_str().unwrap(),
        "--points",
        "2",
        "--samples",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn validate_theorem1_report_and_errors() {
    let dir = tmp("theorem1");
    let out = run(&[
        "validate-theorem1",
        "--epsilon",
        "0.05",
        "--beta",
        "0.01",
        "--nu",
        "1.0",
        "--trials",
        "50",
        "--max-samples",
        "20000",
        "--batch-size",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("theorem1_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["trials"], 50);
    assert_eq!(report["acceptance_rate"], 1.0);
    // perfect stream accepts at the minimal integer above the bound
    let bound = voltflex::stats::certify_min_samples(1.0, 0.05, 0.01);
    assert_eq!(report["min_accept_samples"], bound.floor() as u64 + 1);

    let zero = run(&[
        "validate-theorem1",
        "--epsilon",
        "0.05",
        "--beta",
        "0.01",
        "--nu",
        "0.9",
        "--trials",
        "0",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn gen_feeder_output_loads_back() {
    let dir = tmp("genfeeder");
    let feeder_path = dir.join("feeder.json");
    let out = run(&[
        "gen-feeder",
        "--nodes",
        "6",
        "--shape",
        "binary-tree",
        "--seed",
        "3",
        "--out-file",
        feeder_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let model = voltflex::grid::load_feeder(&feeder_path).unwrap();
    assert_eq!(model.node_count(), 6);

    // and it slots straight into a scenario config
    let cfg_path = dir.join("config.json");
    std::fs::write(
        &cfg_path,
        format!(
            r#"{{
                "controller": "tracking",
                "horizon_steps": 3,
                "population": {{"count": 12}},
                "feeder": {{"file": {:?}}},
                "loads": {{"nominal_real_kw": 80.0}}
            }}"#,
            feeder_path.to_str().unwrap()
        ),
    )
    .unwrap();
    let sim = run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(
        sim.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&sim.stderr)
    );

    let bad = run(&[
        "gen-feeder",
        "--nodes",
        "0",
        "--out-file",
        feeder_path.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
