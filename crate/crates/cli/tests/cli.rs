use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 7
trials = 2
delta = 0.5

[[sweep]]
name = "tiny"
kind = "n"
case = "QMF"
variant = "both"
n_grid = [10, 20]
epsilons = [1.0]
"#;

fn dpdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpdr")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn validate_shipped_configs() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let out = dpdr(&["validate", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL.replace("delta = 0.5", "delta = 2.0"));
    let out = dpdr(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let out = dpdr(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_records_exit_3() {
    let out = dpdr(&["summarize", "--records", "/nonexistent/records.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn feeder_description_and_emit() {
    let out = dpdr(&["feeder"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("4 buses, 3 lines"));

    let out = dpdr(&["feeder", "--emit", "--section-length-km", "2.5"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("2.5"));

    assert_eq!(dpdr(&["feeder", "--section-length-km=0"]).status.code(), Some(1));
}

#[test]
fn run_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = dpdr(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["records.csv", "summary.csv", "timings.csv", "tiny.svg"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let records = std::fs::read_to_string(out_dir.join("records.csv")).unwrap();
    // 2 n values x 2 variants x 2 trials plus the header.
    assert_eq!(records.lines().count(), 9);

    let out = dpdr(&["summarize", "--records", out_dir.join("records.csv").to_str().unwrap()]);
    assert!(out.status.success());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.contains("QMF_L"));
}

#[test]
fn seed_override_changes_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let run = |seed: &str, sub: &str| {
        let o = dir.path().join(sub);
        let out = dpdr(&["run", "--config", &cfg, "--out", o.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success());
        std::fs::read(o.join("records.csv")).unwrap()
    };
    let a = run("1", "a");
    assert_eq!(a, run("1", "b"));
    assert_ne!(a, run("2", "c"));
}
