use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn loopdrive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopdrive")).args(args).output().unwrap()
}

fn routes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/routes").canonicalize().unwrap()
}

fn write_config(dir: &Path, body: serde_json::Value) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn rule_following(dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "label": "cli",
        "routes": routes_dir(),
        "fast": { "kind": "builtin", "driver": "rule_following" },
        "slow": { "kind": "builtin", "driver": "command_translator" },
        "repetitions": 1,
        "seed": 3,
        "output_dir": dir.join("out"),
    })
}

#[test]
fn validate_config_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), rule_following(dir.path()));
    let out = loopdrive(&["validate-config", "--config", good.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 6 routes"));

    let mut bad = rule_following(dir.path());
    bad["repetitions"] = 0.into();
    let bad = write_config(dir.path(), bad);
    assert_eq!(loopdrive(&["validate-config", "--config", bad.to_str().unwrap()]).status.code(), Some(1));

    let missing = dir.path().join("nope.json");
    assert_eq!(loopdrive(&["validate-config", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), rule_following(dir.path()));
    let out_dir = dir.path().join("custom");
    let out = loopdrive(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
        "--parallelism",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("aggregate.json").is_file());
    assert!(out_dir.join("manifest.json").is_file());
    assert_eq!(std::fs::read_dir(out_dir.join("traces")).unwrap().count(), 6);

    let report = loopdrive(&["report", out_dir.to_str().unwrap(), "--full"]);
    assert!(report.status.success());
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("cli"));
    assert!(text.contains("r01_urban_straight"));
}

#[test]
fn dead_models_still_produce_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = rule_following(dir.path());
    body["fast"] = serde_json::json!({ "kind": "failing" });
    body["slow"] = serde_json::json!({ "kind": "failing", "status": "transport_error" });
    body["max_frames"] = 300.into();
    let cfg = write_config(dir.path(), body);
    let out = loopdrive(&["run", "--config", cfg.to_str().unwrap(), "--repetitions", "1"]);
    // Every episode finishes with a trace; blocked episodes are not failures.
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["summary"]["driving_score"]["mean"], 0.0);
}

#[test]
fn scen_gen_writes_a_loadable_suite() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = rule_following(dir.path());
    body["fast"] = serde_json::json!({ "kind": "scripted", "rules": [{ "text": "A car is ahead." }] });
    body["slow"] = serde_json::json!({
        "kind": "scripted",
        "rules": [{ "text": "ACTOR pedestrian AT progress=0.5 offset=-4 BEHAVIOR crossing speed=1.2 trigger=12" }]
    });
    let cfg = write_config(dir.path(), body);
    let suite = dir.path().join("suite");
    let out = loopdrive(&["scen-gen", "--config", cfg.to_str().unwrap(), "--output", suite.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("6 of 6 routes have a scenario"));

    let run = loopdrive(&["run", "--config", cfg.to_str().unwrap(), "--scenarios", suite.to_str().unwrap()]);
    assert!(run.status.code().is_some_and(|c| c == 0 || c == 2));
}

#[test]
fn report_rejects_missing_input() {
    let out = loopdrive(&["report", "/definitely/not/here"]);
    assert!(!out.status.success());
}
