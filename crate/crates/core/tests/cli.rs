use std::path::Path;
use std::process::{Command, Output};

fn vclos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vclos"))
        .args(args)
        .env_remove("VCLOS_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn smoke() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml").display().to_string()
}

#[test]
fn smoke_run_writes_jobs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = vclos(&["run", &smoke(), "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["vclos_fifo_lambda200_seed7_jobs.csv", "vclos_fifo_lambda200_seed7_summary.json"]
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(&names[1])).unwrap()).unwrap();
    assert!(summary["completed"].as_u64().unwrap() > 0);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(vclos(&["run", &smoke(), "--output-dir", d.path().to_str().unwrap()]).status.success());
    }
    for name in ["vclos_fifo_lambda200_seed7_jobs.csv", "vclos_fifo_lambda200_seed7_summary.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn malformed_config_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "strategies = [\"nope\"]\n").unwrap();
    let out = vclos(&["run", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml") && err.contains("line 1") && err.contains("nope"), "{err}");
}

#[test]
fn verify_ring_reports_one_flow_per_link() {
    let out = vclos(&["--json", "verify", "ring", "-n", "64", "--leaves", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["max"], 1);
}

#[test]
fn adversarial_example_collides_under_spine_index_routing() {
    // a violated bound is a failing exit, with the witness on stdout
    let out = vclos(&["--json", "verify", "--adversarial"]);
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["max"], 2, "{v}");
    assert_eq!(v["witness"]["flows"].as_array().unwrap().len(), 2);
}

#[test]
fn synth_trace_is_seeded() {
    let run = |seed: &str| vclos(&["synth-trace", "--count", "50", "--seed", seed]).stdout;
    let a = run("4");
    assert_eq!(a, run("4"));
    assert_ne!(a, run("5"));
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 50);
}
