use std::path::Path;
use std::process::{Command, Output};

fn dcmstep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmstep")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&dcmstep(&["--help"])), 0);
    assert_eq!(code(&dcmstep(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&dcmstep(&["fly"])), 1);
    assert_eq!(code(&dcmstep(&["plan", "--bogus"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&dcmstep(&["--out", out, "simulate", "--bucket", "swing", "--force", "10"])), 1);
    assert_eq!(code(&dcmstep(&["--out", out, "simulate", "--policy", "/no/such/policy.json"])), 1);

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"sweep": {"forcez": [1.0]}}"#).unwrap();
    assert_eq!(code(&dcmstep(&["--config", cfg.to_str().unwrap(), "--out", out, "sweep"])), 1);
    std::fs::write(&cfg, r#"{"eval": {"seeds": 0}}"#).unwrap();
    assert_eq!(code(&dcmstep(&["--config", cfg.to_str().unwrap(), "--out", out, "eval"])), 1);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let o = dcmstep(&["--out", "/proc/dcmstep-no-such-dir", "simulate", "--force", "10", "--length", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn plan_writes_an_optimal_tick() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcmstep(&["--out", dir.path().to_str().unwrap(), "plan"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let plan: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["output"]["status"], "Optimal");
}

#[test]
fn simulate_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dcmstep(&["--out", out, "simulate", "--force", "120", "--direction", "270", "--length", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["status"], "walking");
    let trace = dir.path().join("trace.jsonl");
    let o = dcmstep(&["--out", out, "replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["footsteps.svg", "timeline.svg", "timeline.csv"] {
        assert!(Path::new(out).join(f).metadata().unwrap().len() > 0, "{f}");
    }
}

#[test]
fn missing_trace_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&dcmstep(&["--out", out, "replay", "--trace", "/no/such/trace.jsonl"])), 1);
}
