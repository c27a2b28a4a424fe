use std::fs;
use std::process::{Command, Output};

use ossa_cli::{resolve_run_config, EvalArgs, RunConfig};
use ossa_core::oracle::TaskId;

fn ossa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ossa")).args(args).env_remove("OSSA_API_KEY").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn exit_codes() {
    assert_eq!(ossa(&["eval", "run", "--dataset", "/no/such/file.json"]).status.code(), Some(2));
    assert_eq!(ossa(&["eval", "run", "--backend", "monolithic-remote"]).status.code(), Some(2));
    assert_eq!(ossa(&["eval", "run", "--task", "t7"]).status.code(), Some(2));
    assert_eq!(ossa(&["eval", "run", "--runs", "0"]).status.code(), Some(2));
    assert_eq!(ossa(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ossa(&["--help"]).status.code(), Some(0));
}

#[test]
fn remote_backend_without_key_is_a_backend_failure() {
    // the endpoint is never contacted: the missing key fails the first call
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.json");
    assert!(ossa(&["dataset", "gen", "--scenes", "2", "--out", data.to_str().unwrap()]).status.success());
    let o = ossa(&[
        "eval", "run", "--dataset", data.to_str().unwrap(), "--backend", "monolithic-remote",
        "--base-url", "http://127.0.0.1:9", "--runs", "1",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validate_reports_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"name": "x", "version": "1", "catalog_version": "catalog-1", "scenes": [{"scene_id": "a", "objects": {}}]}"#).unwrap();
    let o = ossa(&["dataset", "validate", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scenes[0]"));
}

#[test]
fn simulated_run_and_state_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ossa(&[
        "eval", "run", "--backend", "modular-sim", "--p-state-omit", "1.0", "--task", "t1", "--mode", "zero-shot,few-shot",
        "--runs", "2", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.contains("OSSA-LLM-SIM(Z)") && table.contains("OSSA-LLM-SIM(F)"), "{table}");

    let r = ossa(&["report", "render", "--input", out.to_str().unwrap(), "--columns", "state", "--format", "csv"]);
    assert!(r.status.success());
    let csv = stdout(&r);
    assert!(csv.starts_with("Task,Method,StaA\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(!csv.contains("ComA"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["backend"], "modular-sim");
    assert_eq!(manifest["config"]["backend_settings"]["p_state_omit"], 1.0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(&path, r#"{"backend": "modular-sim", "runs": 5, "tasks": ["T2"]}"#).unwrap();
    let args = EvalArgs { config: Some(path.clone()), runs: Some(2), ..EvalArgs::default() };
    let c = resolve_run_config(&args).unwrap();
    assert_eq!(c.backend, "modular-sim");
    assert_eq!(c.runs, 2);
    assert_eq!(c.tasks, vec![TaskId::T2]);
    let all = EvalArgs { task: vec!["all".into()], seed: Some(9), ..EvalArgs::default() };
    let c = resolve_run_config(&all).unwrap();
    assert_eq!(c.tasks, TaskId::ALL.to_vec());
    assert_eq!((c.gen.seed, c.backend_settings.seed), (9, 9));
    fs::write(&path, r#"{"bogus": 1}"#).unwrap();
    assert!(RunConfig::load(&path).is_err());
}
