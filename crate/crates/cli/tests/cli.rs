use std::path::Path;
use std::process::{Command, Output};

use sttk::TrajectoryLog;

fn sttk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sttk")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bundled_source(name: &str) -> String {
    sttk::scenario::bundled_source(name).unwrap().to_string()
}

#[test]
fn list_and_show_bundled_scenarios() {
    let out = sttk(&["list"]);
    assert_eq!(code(&out), 0);
    let listing = text(&out.stdout);
    for name in ["paper_2d_hw_case", "paper_2d_sim50", "paper_uav3d", "obstacle_free"] {
        assert!(listing.contains(name), "{listing}");
    }
    let out = sttk(&["show", "obstacle_free"]);
    assert_eq!(code(&out), 0);
    assert_eq!(text(&out.stdout), bundled_source("obstacle_free"));
    assert_eq!(code(&sttk(&["show", "no_such_scenario"])), 1);
}

#[test]
fn validate_accepts_names_and_files() {
    assert_eq!(code(&sttk(&["validate", "paper_2d_hw_case"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("free.toml");
    std::fs::write(&file, bundled_source("obstacle_free")).unwrap();
    let out = sttk(&["validate", path_str(&file)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert_eq!(code(&sttk(&["validate", "missing.toml"])), 1);
}

#[test]
fn malformed_key_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    let src = bundled_source("obstacle_free").replace("r_max", "r_maximum");
    std::fs::write(&file, src).unwrap();
    let out = sttk(&["validate", path_str(&file)]);
    assert_eq!(code(&out), 1);
    let err = text(&out.stderr);
    assert!(err.contains("tube.r_maximum"), "{err}");
}

#[test]
fn invalid_scenario_writes_no_log() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    let src = bundled_source("obstacle_free").replace("r_min = 0.1", "r_min = 0.9");
    std::fs::write(&file, src).unwrap();
    let out = sttk(&["validate", path_str(&file)]);
    assert_eq!(code(&out), 1);
    assert!(text(&out.stdout).contains("problem"));

    let log = dir.path().join("out.jsonl");
    let out = sttk(&["run", path_str(&file), "-o", path_str(&log)]);
    assert_eq!(code(&out), 1);
    assert!(!log.exists());
}

#[test]
fn run_verify_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("free.jsonl");
    let out = sttk(&["run", "obstacle_free", "-o", path_str(&log)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("reached"));

    let report = dir.path().join("report.json");
    let out = sttk(&[
        "verify",
        path_str(&log),
        "obstacle_free",
        "--samples",
        "10000",
        "--times",
        "5",
        "-o",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stdout));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["scenario"], "obstacle_free");
    assert!(json["checks"].as_array().unwrap().len() > 5);

    let csv = dir.path().join("free.csv");
    let out = sttk(&["export", path_str(&log), "--format", "csv", "-o", path_str(&csv)]);
    assert_eq!(code(&out), 0);
    let parsed = TrajectoryLog::load(&log).unwrap();
    let body = std::fs::read_to_string(&csv).unwrap();
    let mut lines = body.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, ["t", "c_1", "c_2", "r", "y_1", "y_2", "u_1", "u_2"]);
    let mut rows = 0;
    for (line, step) in lines.zip(&parsed.steps) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let expected: Vec<f64> = [vec![step.t], step.c.clone(), vec![step.r], step.y.clone(), step.u.clone()].concat();
        // bit-exact, not approximately equal
        assert!(cells.iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits()));
        rows += 1;
    }
    assert_eq!(rows, parsed.steps.len());

    let out = sttk(&["export", path_str(&log)]);
    assert_eq!(code(&out), 0);
    assert_eq!(text(&out.stdout), body);
}

#[test]
fn verify_rejects_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("free.jsonl");
    assert_eq!(code(&sttk(&["run", "obstacle_free", "-o", path_str(&log)])), 0);
    let mut parsed = TrajectoryLog::load(&log).unwrap();
    parsed.steps[100].r = 1.0;
    parsed.save(&log).unwrap();
    let out = sttk(&["verify", path_str(&log), "obstacle_free", "--no-mc"]);
    assert_eq!(code(&out), 1);
    assert!(text(&out.stdout).contains("FAIL"));
}

#[test]
fn overrides_and_invariant_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("short.jsonl");
    let out = sttk(&["run", "obstacle_free", "--horizon", "1", "--dt", "0.01", "-o", path_str(&log)]);
    assert_eq!(code(&out), 0);
    let parsed = TrajectoryLog::load(&log).unwrap();
    assert_eq!(parsed.steps.len(), 101);
    assert_eq!(parsed.header.dt, 0.01);

    let file = dir.path().join("shaken.toml");
    let src = bundled_source("disturbed_double_integrator")
        .replace("disturbance_bound = 0.3", "disturbance_bound = 40.0");
    std::fs::write(&file, src).unwrap();
    let out = sttk(&["run", path_str(&file), "--horizon", "2", "-o", path_str(&log)]);
    assert_eq!(code(&out), 2, "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("funnel violation"));
}

#[test]
fn run_all_in_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios");
    std::fs::create_dir(&scenarios).unwrap();
    std::fs::write(scenarios.join("a.toml"), bundled_source("obstacle_free")).unwrap();
    std::fs::write(
        scenarios.join("b.toml"),
        bundled_source("obstacle_free").replace("seed = 1", "seed = 2"),
    )
    .unwrap();
    std::fs::write(scenarios.join("notes.txt"), "not a scenario").unwrap();
    let out_dir = dir.path().join("logs");
    let out = sttk(&["run", "--all", path_str(&scenarios), "-o", path_str(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stdout));
    assert!(out_dir.join("a.jsonl").exists());
    assert!(out_dir.join("b.jsonl").exists());
    assert!(!out_dir.join("notes.jsonl").exists());
}
