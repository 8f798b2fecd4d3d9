use std::fs;
use std::process::{Command, Output};

use neuroloop::protocol::EXAMPLE_PROTOCOL;

fn neuroloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroloop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, EXAMPLE_PROTOCOL).unwrap();
    let o = neuroloop(&["validate", good.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("ok: Electrical reward"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, EXAMPLE_PROTOCOL.replace("8.5", "25.0")).unwrap();
    let o = neuroloop(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1, "{out}");
    assert!(out.contains("electrical_params.amplitude_uA"));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = neuroloop(&["run", "--trials", "4", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("trials: 4"));
    for f in ["events.jsonl", "record.json", "metrics.csv", "plasticity.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = neuroloop(&["report", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("success rate"));
    let o = neuroloop(&["report", out.join("events.jsonl").to_str().unwrap()]);
    assert!(o.status.success());
    let table: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(table["overall"]["trials"], 4);
}

#[test]
fn repeated_runs_in_parallel() {
    let o = neuroloop(&[
        "run", "--env", "avoidance1d", "--trials", "3", "--repeat", "3", "--parallel", "2",
        "--baseline-random",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().next().unwrap().starts_with("seed 0:"));
}

#[test]
fn autoloop_with_stub() {
    let dir = tempfile::tempdir().unwrap();
    let stub = dir.path().join("stub.json");
    let responses = serde_json::json!([EXAMPLE_PROTOCOL, "{broken", {"fail": "offline"}]);
    fs::write(&stub, responses.to_string()).unwrap();
    let cfg = dir.path().join("meta.json");
    fs::write(&cfg, r#"{"experiment": {"trials_per_block": 2}, "refine_every": 3}"#).unwrap();
    let dataset = dir.path().join("data.jsonl");
    let template = dir.path().join("template.txt");
    let o = neuroloop(&[
        "autoloop",
        "--config",
        cfg.to_str().unwrap(),
        "--iterations",
        "3",
        "--stub-responses",
        stub.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--template-out",
        template.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("3 iterations, 2 failed, 1 template refinements"));
    assert_eq!(fs::read_to_string(dataset).unwrap().lines().count(), 3);
    assert!(fs::read_to_string(template).unwrap().contains("Example 1"));
}

#[test]
fn probe_reports_classification() {
    let o = neuroloop(&["probe", "--pairings", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("path "));
    assert!(["LTP", "LTD", "NoChange", "no change"].iter().any(|c| out.contains(c)), "{out}");

    let o = neuroloop(&["probe"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1, "{out}");
    assert!(out.contains("slope"));
}
