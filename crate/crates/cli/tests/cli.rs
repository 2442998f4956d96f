use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dualavg(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualavg"));
    cmd.args(args).env_remove("DUALAVG_OUT");
    if let Some(dir) = out_env {
        cmd.env("DUALAVG_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, algorithms: &str, rounds: usize) -> String {
    let path = dir.join("tiny.json");
    let text = format!(
        r#"{{
  "name": "tiny",
  "problem": {{"synth": {{"n": 4, "m": 6, "p": 5, "sparsity": 2, "noise_sd": 0.1}}}},
  "topologies": [{{"kind": "cycle", "n": 4}}],
  "algorithms": {algorithms},
  "rounds": {rounds},
  "seed": 3
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("stderr is JSON")
}

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"[{"algorithm": "dda"}, {"algorithm": "adda"}]"#, 20);
    let out_dir = dir.path().join("out");
    let out = dualavg(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(printed.lines().count(), 4);
    for alg in ["dda", "adda"] {
        let csv = std::fs::read_to_string(out_dir.join(format!("tiny_cycle_{alg}.csv"))).unwrap();
        assert!(csv.starts_with("t,obj_err,cons_err"));
        assert_eq!(csv.lines().count(), 22);
        let sidecar: Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join(format!("tiny_cycle_{alg}.json"))).unwrap())
                .unwrap();
        assert_eq!(sidecar["config"]["algorithm"], alg);
        assert_eq!(sidecar["problem_hash"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn seed_override_changes_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"[{"algorithm": "dda"}]"#, 3);
    let hash = |seed: &str| {
        let o = dir.path().join(seed);
        let out = dualavg(&["run", "--config", &cfg, "--seed", seed, "--out", o.to_str().unwrap()], None);
        assert!(out.status.success());
        let v: Value = serde_json::from_str(&std::fs::read_to_string(o.join("tiny_cycle_dda.json")).unwrap()).unwrap();
        v["problem_hash"].as_str().unwrap().to_owned()
    };
    assert_ne!(hash("1"), hash("2"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"[{"algorithm": "pg_extra"}]"#, 5);
    let env_dir = dir.path().join("env_out");
    let out = dualavg(&["run", "--config", &cfg], Some(&env_dir));
    assert!(out.status.success());
    assert!(env_dir.join("tiny_cycle_pg_extra.csv").exists());
}

#[test]
fn inadmissible_step_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"[{"algorithm": "adda", "step": {"per_l": 1.0}}]"#, 5);
    let o = dir.path().join("o");
    let out = dualavg(&["run", "--config", &cfg, "--out", o.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "validation");
    assert!(!o.join("tiny_cycle_adda.csv").exists());
    let forced = dualavg(&["run", "--force", "--config", &cfg, "--out", o.to_str().unwrap()], None);
    assert!(matches!(forced.status.code(), Some(0) | Some(3)));
    assert!(o.join("tiny_cycle_adda.csv").exists());
}

#[test]
fn divergence_exit_code_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loose.json");
    let text = r#"{
  "name": "loose",
  "problem": {"synth": {"n": 4, "m": 6, "p": 5, "sparsity": 2, "noise_sd": 0.1, "constrained": false}},
  "topologies": [{"kind": "cycle", "n": 4}],
  "algorithms": [{"algorithm": "dda", "step": {"per_l": 50.0}}],
  "rounds": 2000,
  "seed": 1
}"#;
    std::fs::write(&path, text).unwrap();
    let o = dir.path().join("o");
    let out = dualavg(&["run", "--force", "--config", path.to_str().unwrap(), "--out", o.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "divergence");
    assert!(o.join("loose_cycle_dda.csv").exists());
    let sidecar: Value =
        serde_json::from_str(&std::fs::read_to_string(o.join("loose_cycle_dda.json")).unwrap()).unwrap();
    assert!(sidecar["failure"]["round"].as_u64().unwrap() > 0);
}

#[test]
fn malformed_config_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"name": "bad", "rounds": 0}"#).unwrap();
    let out = dualavg(&["run", "--config", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().is_some());
    let missing = dualavg(&["constants", "--config", dir.path().join("nope.json").to_str().unwrap()], None);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn compare_writes_aligned_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"[{"algorithm": "dda"}, {"algorithm": "apm"}, {"algorithm": "classic_dda"}]"#, 10);
    let o = dir.path().join("o");
    let out = dualavg(&["compare", "--config", &cfg, "--out", o.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(o.join("tiny_cycle_compare.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("t,dda_obj_err,dda_cons_err,dda_avg_obj_err,apm_obj_err"));
    assert_eq!(table.lines().count(), 12);
    let again = tempfile::tempdir().unwrap();
    let out = dualavg(&["compare", "--config", &cfg, "--out", again.path().to_str().unwrap()], None);
    assert!(out.status.success());
    assert_eq!(table, std::fs::read_to_string(again.path().join("tiny_cycle_compare.csv")).unwrap());
}

#[test]
fn constants_report_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"[{"algorithm": "dda"}]"#, 10);
    let o = dir.path().join("o");
    let out = dualavg(&["constants", "--config", &cfg, "--out", o.to_str().unwrap()], None);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let topo = &v["topologies"][0];
    assert_eq!(topo["n"], 4);
    assert!(topo["dda"]["rho"].as_f64().unwrap() < 1.0);
    assert!(o.join("tiny_constants.json").exists());
}

#[test]
fn project_check_single_vector() {
    let out = dualavg(&["project-check", "--vector", "3,0", "--radius", "1"], None);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["projection"], serde_json::json!([1.0, 0.0]));
    assert_eq!(v["l1_norm"], 1.0);
    let neg = dualavg(&["project-check", "--vector", "-0.5,2,-1", "--radius", "1"], None);
    let v: Value = serde_json::from_slice(&neg.stdout).unwrap();
    assert!((v["l1_norm"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn project_check_random_agrees_with_bisection() {
    let out = dualavg(&["project-check", "--random", "300", "--dim", "9", "--seed", "5"], None);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], true);
    let bad = dualavg(&["project-check", "--vector", "1,2", "--radius", "-1"], None);
    assert_eq!(bad.status.code(), Some(2));
}
