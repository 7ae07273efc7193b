use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_collapse-walk");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn exec(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("COLLAPSE_WALK_THREADS", "1").output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const BINARY: &str = r#"{
  "scenario": {"kind": "binary", "alpha": 0.6, "beta": 0.8},
  "trials": 2000,
  "master_seed": 9,
  "shift": {"d": 0.05}
}"#;

fn close(v: &Value, want: f64, tol: f64) -> bool {
    (v.as_f64().unwrap() - want).abs() <= tol
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", BINARY);
    assert_eq!(exec(&["run", "--config", &cfg, "--check"]).status.code(), Some(0));
    assert_eq!(exec(&["run", "--config", &cfg, "--trials", "0"]).status.code(), Some(1));
    assert_eq!(exec(&["run", "--config", "/nonexistent.json"]).status.code(), Some(1));
    let bad = write(dir.path(), "bad.json", &BINARY.replace("\"trials\"", "\"trails\""));
    assert_eq!(exec(&["run", "--config", &bad]).status.code(), Some(1));
    let unseeded = write(dir.path(), "u.json", &BINARY.replace("\"master_seed\": 9,", ""));
    assert_eq!(exec(&["run", "--config", &unseeded]).status.code(), Some(1));
    assert_eq!(exec(&["run", "--config", &unseeded, "--seed", "3"]).status.code(), Some(0));
    assert_eq!(exec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(exec(&["--help"]).status.code(), Some(0));
}

#[test]
fn failed_check_exits_with_two() {
    // the eraser check compares against the leading-order value with a 25%
    // band; at N = 2 and d = 0.3 the walk is far outside that regime
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"scenario": {"kind": "eraser-chain", "alpha": 0.6, "beta": 0.8, "n": 2},
            "trials": 4000, "master_seed": 1, "shift": {"d": 0.3}}"#,
    );
    let out = exec(&["run", "--config", &cfg, "--check"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let plain = exec(&["run", "--config", &cfg]);
    assert_eq!(plain.status.code(), Some(0));
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", BINARY);
    let strip = |out: &Output| {
        let mut v = json(out);
        v["wall_time_s"] = Value::Null;
        v
    };
    let a = strip(&exec(&["run", "--config", &cfg]));
    let b = strip(&exec(&["run", "--config", &cfg]));
    assert_eq!(a, b);
    let threaded = Command::new(BIN).args(["run", "--config", &cfg]).env("COLLAPSE_WALK_THREADS", "3").output().unwrap();
    assert_eq!(strip(&threaded), a);
    let c = strip(&exec(&["run", "--config", &cfg, "--seed", "10"]));
    assert_ne!(a["outcomes"], c["outcomes"]);
}

#[test]
fn artifacts_agree_with_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", BINARY);
    let out = dir.path().join("out");
    let report = json(&exec(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--traces", "--dump-state"]));
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);

    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("trial,outcome,steps,clamps,final_p"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2000);
    for o in report["outcomes"].as_array().unwrap() {
        let label = o["label"].as_str().unwrap();
        let n = rows.iter().filter(|r| r[1] == label).count() as u64;
        assert_eq!(n, o["count"].as_u64().unwrap(), "{label}");
    }

    let traces = fs::read_to_string(out.join("traces.jsonl")).unwrap();
    let mut total_steps = 0u64;
    for (i, line) in traces.lines().enumerate() {
        let t: Value = serde_json::from_str(line).unwrap();
        assert_eq!(t["trial"].as_u64(), Some(i as u64));
        let steps = t["steps"].as_array().unwrap().len() as u64;
        assert_eq!(steps.to_string(), rows[i][2]);
        total_steps += steps;
    }
    let mean = report["steps"]["mean"].as_f64().unwrap();
    assert!((total_steps as f64 / 2000.0 - mean).abs() < 1e-9);

    let state: Value = serde_json::from_str(&fs::read_to_string(out.join("state.json")).unwrap()).unwrap();
    assert_eq!(state["dims"], serde_json::json!([2]));
}

#[test]
fn predict_golden_values() {
    let nominal = json(&exec(&["predict", "--config", configs().join("nominal-scale.json").to_str().unwrap()]));
    assert!(close(&nominal["scale"]["steps_to_collapse"], 1e9, 1e-3));
    assert!(close(&nominal["scale"]["d_bar"], 3.1622776601683795e-5, 1e-15));
    assert!(close(&nominal["scale"]["d_bar_rounded"], 3e-5, 1e-18));

    let eraser = json(&exec(&["predict", "--config", configs().join("eraser.json").to_str().unwrap()]));
    assert!(close(&eraser["eraser"]["deviant_prob_per_term"], 0.01, 1e-12));
    assert!(close(&eraser["eraser"]["deviant_prob_total"], 0.02, 1e-12));

    let dir = tempfile::tempdir().unwrap();
    let off = write(
        dir.path(),
        "off.json",
        r#"{"scenario": {"kind": "amplified-alpha"}, "trials": 1, "master_seed": 1, "shift": {"d": 0}}"#,
    );
    let file = dir.path().join("p.json");
    let p = json(&exec(&["predict", "--config", &off, "--out", file.to_str().unwrap()]));
    for k in ["case_absorbed", "case_doubled", "average"] {
        assert_eq!(p["amplified"]["exact"][k].as_f64(), Some(0.0));
    }
    let saved: Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    assert_eq!(saved, p);

    let binary = json(&exec(&["predict", "--config", configs().join("binary.json").to_str().unwrap()]));
    assert!(close(&binary["outcomes"][0]["probability"], 0.3, 1e-12));
    assert!(close(&binary["expected_steps"], 2100.0, 1e-6));
}

#[test]
fn oracle_examples() {
    let m = json(&exec(&["oracle", "markov", "--p0", "0.3", "--d", "0.01"]));
    assert!(close(&m["absorb_high"], 0.3, 1e-9));

    let dir = tempfile::tempdir().unwrap();
    let events = write(
        dir.path(),
        "ev.json",
        r#"[{"id": 1, "t": 0, "x": 0, "detector": 0, "system": 0},
            {"id": 2, "t": 1, "x": 0, "detector": 0, "system": 0},
            {"id": 3, "t": 0, "x": 10, "detector": 1, "system": 0}]"#,
    );
    let e = json(&exec(&["oracle", "extensions", "--events", &events]));
    assert_eq!(e["count"].as_u64(), Some(3));
    assert_eq!(e["sampler_count"].as_f64(), Some(3.0));

    let h = "0.7071067811865476";
    let s = json(&exec(&["oracle", "marginals", "--alpha", h, "--beta", "-0.7071067811865476", "--gamma", "0.8", "--delta", "0,0.6"]));
    for w in ["wing_0", "wing_1"] {
        assert!(close(&s[w][0], 0.5, 1e-12) && close(&s[w][1], 0.5, 1e-12));
    }
    assert!(close(&s["joint"][0], 0.18, 1e-12));

    let x = json(&exec(&["oracle", "singlet-expansion", "--alpha", h, "--beta", "-0.7071067811865476", "--gamma", "0.8", "--delta", "0,0.6"]));
    assert!(close(&x["densities"][1], 0.32, 1e-12));

    let big = write(
        dir.path(),
        "big.json",
        &serde_json::to_string(
            &(0..30)
                .map(|i| serde_json::json!({"id": i, "t": 0, "x": 10 * i, "detector": 0, "system": 0}))
                .collect::<Vec<_>>(),
        )
        .unwrap(),
    );
    let refused = exec(&["oracle", "extensions", "--events", &big]);
    assert_eq!(refused.status.code(), Some(1));
}

#[test]
fn signal_scan_isolates_born() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scan.csv");
    let out = exec(&["signal-scan", "--seed", "4", "--states", "20", "--bases", "4", "--out", csv.to_str().unwrap(), "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("rule,k,state_id,basis_id,gap\n"));
    assert_eq!(text.lines().count(), 1 + 7 * 20 * 4);
}

#[test]
fn sequence_test_checks_order_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bell.json",
        r#"{"scenario": {"kind": "bell-epr", "alpha": 0.7071067811865476, "beta": -0.7071067811865476,
                         "basis_b": {"gamma": 0.8, "delta": [0, 0.6]}},
            "trials": 3000, "master_seed": 2, "shift": {"d": 0.1}}"#,
    );
    let r = json(&exec(&["sequence-test", "--config", &cfg, "--check"]));
    assert_eq!(r["incomplete"], serde_json::json!([0, 0]));
    assert!(r["chi_square"]["p_value"].as_f64().unwrap() > 0.01);

    let binary = write(dir.path(), "b.json", BINARY);
    assert_eq!(exec(&["sequence-test", "--config", &binary]).status.code(), Some(1));
}
