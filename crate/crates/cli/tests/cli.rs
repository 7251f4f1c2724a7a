use dpbalance_cli::csv_out::CSV_HEADER;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpbalance"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = run(&[
        "simulate",
        "--config",
        fixture("desk.json").to_str().unwrap(),
        "--scheduler",
        "dpbalance",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert_eq!(lines.len(), 11);
    assert!(!text.contains('\r'));
    assert!(stdout(&o).contains("cumulative efficiency"));
}

#[test]
fn reruns_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
    for p in &paths {
        let o = run(&[
            "simulate",
            "--config",
            fixture("desk.json").to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = run(&["simulate", "--config", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"rounds\": 0\n}\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rounds"));
    std::fs::write(&cfg, "{\n  \"rounds\": 3,\n  \"colour\": 1\n}\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn unknown_subcommand_and_scheduler_are_usage_errors() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let o = run(&[
        "simulate",
        "--config",
        fixture("desk.json").to_str().unwrap(),
        "--scheduler",
        "lottery",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn demo_matches_goldens() {
    let o = run(&["demo-fig2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("dpbalance grants {P1: 1.0000, P3: 1.2500} efficiency 1.0000 units 2.2500"));
    assert!(text.contains("dpf       grants {P3: 1.0000, P4: 1.0000} efficiency 0.7000"));
    assert!(text.contains("fcfs      grants {P1: 1.0000, P2: 1.0000}"));
}

#[test]
fn demo_rejects_invalid_beta() {
    assert_eq!(run(&["demo-fig2", "--beta", "1"]).status.code(), Some(2));
}

#[test]
fn sweep_keys_series_by_beta() {
    let o = run(&["sweep", "--betas", "0.5,2.2,5", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut betas: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(betas.len(), 30);
    betas.dedup();
    assert_eq!(betas, ["0.5", "2.2", "5"]);
    assert_eq!(run(&["sweep", "--betas", "1.0"]).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--betas", "2", "--jobs", "0"]).status.code(), Some(2));
}

#[test]
fn solve_prints_worked_example_shares() {
    let o = run(&["solve", "--demands", fixture("fig2.json").to_str().unwrap(), "--beta", "2.2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let share = |a: usize, k: &str| v["analysts"][a]["shares"][k].as_f64().unwrap();
    assert!((share(0, "B1") - 0.5).abs() < 0.01);
    assert!((share(0, "B2") - 0.5).abs() < 0.01);
    assert!((share(1, "B1") - 0.5).abs() < 0.01);
    assert!((share(1, "B2") - 0.4286).abs() < 0.01);
    assert_eq!(run(&["solve", "--demands", "/no/such.json"]).status.code(), Some(2));
}

#[test]
fn properties_emit_reports() {
    let o = run(&["properties", "--regime", "thm2a", "--instances", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"], "holds");
    assert_eq!(v["instances"], 100);
    let o = run(&["properties", "--regime", "thm3b", "--instances", "5"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"], "violated");
    assert_eq!(run(&["properties", "--regime", "thm8"]).status.code(), Some(2));
}
