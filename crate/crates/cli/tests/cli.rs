use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn offpess(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offpess")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = offpess(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let doc: Value = serde_json::from_slice(&out.stderr).expect("stderr is an error document");
    doc["error"]["kind"].as_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_sample_plan_ope_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = dir.path().join("m.json");
    let mu = dir.path().join("mu.json");
    let data = dir.path().join("d.csv");
    let bin = dir.path().join("d.bin");
    let pi = dir.path().join("pi.json");
    let out = offpess(&[
        "gen", "--family", "random", "--states", "3", "--actions", "2", "--horizon", "4", "--seed", "5",
        "--out", p(&mdp), "--behavior-out", p(&mu),
    ]);
    assert!(out.status.success());
    for target in [&data, &bin] {
        let out = offpess(&["sample", "--mdp", p(&mdp), "--policy", p(&mu), "--n", "200", "--seed", "3", "--out", p(target)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = ok_json(&["plan", "--data", p(&data), "--algorithm", "apvi", "--mdp", p(&mdp), "--policy-out", p(&pi)]);
    let b = ok_json(&["plan", "--data", p(&bin), "--algorithm", "apvi", "--mdp", p(&mdp)]);
    assert_eq!(a, b);
    assert!(a["gap"].as_f64().unwrap() >= -1e-10);
    let ope = ok_json(&["ope", "--data", p(&data), "--policy", p(&pi), "--mdp", p(&mdp), "--behavior", p(&mu)]);
    assert!(ope["tau_s"].as_f64().unwrap() >= 1.0 - 1e-12);
    let v = ope["v_hat"].as_f64().unwrap();
    assert!((0.0..=4.0).contains(&v));
}

#[test]
fn hard_instance_bound_and_perturb() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = dir.path().join("hard.json");
    let mu = dir.path().join("mu.json");
    let alt = dir.path().join("alt.json");
    let csv = dir.path().join("cells.csv");
    assert!(offpess(&["gen", "--family", "hard", "--actions", "3", "--horizon", "5", "--out", p(&mdp), "--behavior-out", p(&mu)])
        .status
        .success());
    let b = ok_json(&["bound", "--mdp", p(&mdp), "--behavior", p(&mu), "--n", "1000", "--per-cell-csv", p(&csv)]);
    assert!((b["v_star"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("h,s,a,value"));
    let doc = ok_json(&["perturb", "--mdp", p(&mdp), "--behavior", p(&mu), "--n", "100000", "--out", p(&alt)]);
    assert!(doc["threshold"].as_f64().unwrap() < 100000.0);
    assert!(alt.exists());
}

#[test]
fn sweep_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "algorithms = [\"apvi\"]\nn_grid = [100, 200, 400]\nnum_seeds = 2\noutput = \"res\"\n\n[instance]\nfamily = \"hard\"\nnum_actions = 2\nhorizon = 3\n",
    )
    .unwrap();
    let doc = ok_json(&["sweep", "--config", p(&cfg), "--seed", "1"]);
    assert_eq!(doc["rows"], 6);
    assert!(dir.path().join("res.json").exists());
    assert!(dir.path().join("res.csv").exists());
}

#[test]
fn randomized_commands_need_a_seed() {
    let out = offpess(&["gen", "--family", "random", "--states", "3", "--actions", "2", "--horizon", "4"]);
    assert_eq!(error_kind(&out), "invalid_parameter");
    let out = offpess(&["sample", "--mdp", "m.json", "--policy", "mu.json", "--n", "3"]);
    assert_eq!(error_kind(&out), "usage");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_yields_error_document() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"H\": 1,\n \"S\": }").unwrap();
    let out = offpess(&["bound", "--mdp", p(&bad), "--behavior", p(&bad), "--n", "10"]);
    assert_eq!(error_kind(&out), "parse");
    let out = offpess(&["bound", "--mdp", p(&dir.path().join("missing.json")), "--behavior", "x", "--n", "10"]);
    assert_eq!(error_kind(&out), "io");
}
