mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn waan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_repo_scenarios() {
    for (name, _) in all_scenarios() {
        let o = waan(&["validate", path(&scenario_path(&name))]);
        assert_eq!(
            code(&o),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(scenario_path("casestudy")).unwrap();
    let cases = [
        ("syntax.scenario", "name = \n".to_string()),
        (
            "unknown.scenario",
            good.replace("end_time = 40000", "end_time = 40000\nwarp = 9"),
        ),
        (
            "radius.scenario",
            good.replace("coverage_radius = 60.0", "coverage_radius = -1.0"),
        ),
    ];
    for (file, text) in cases {
        let p = dir.path().join(file);
        std::fs::write(&p, text).unwrap();
        let o = waan(&["validate", path(&p)]);
        assert_eq!(code(&o), 1, "{file}");
        assert!(!o.stderr.is_empty());
        let o = waan(&["run", path(&p), "--out", path(dir.path())]);
        assert_eq!(code(&o), 1, "{file}");
    }
    assert_eq!(
        code(&waan(&[
            "validate",
            path(&dir.path().join("absent.scenario"))
        ])),
        1
    );
}

#[test]
fn bad_arguments_exit_1() {
    let sc = scenario_path("casestudy");
    assert_eq!(code(&waan(&["run", path(&sc), "--mode", "fast"])), 1);
    assert_eq!(code(&waan(&["matrix", path(&sc)])), 1);
    assert_eq!(code(&waan(&["launch"])), 1);
    assert_eq!(code(&waan(&["--help"])), 0);
}

#[test]
fn run_then_report_reproduces_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let o = waan(&[
        "run",
        path(&scenario_path("casestudy")),
        "--seed",
        "1",
        "--mode",
        "baseline",
        "--out",
        path(&run_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = run_dir.join("casestudy-baseline-1.trace.jsonl");
    assert!(trace.exists());
    assert!(run_dir
        .join("casestudy-baseline-1.audit-node-4.jsonl")
        .exists());

    let again = dir.path().join("again");
    let o = waan(&["report", path(&trace), "--out", path(&again)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let read = |d: &Path| std::fs::read_to_string(d.join("runs.csv")).unwrap();
    assert_eq!(read(&run_dir), read(&again));
}

#[test]
fn matrix_writes_every_cell_and_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let o = waan(&[
        "matrix",
        path(&scenario_path("fallback")),
        "--seeds",
        "1,2",
        "--modes",
        "waan,baseline",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for mode in ["waan", "baseline"] {
        for seed in [1, 2] {
            assert!(dir
                .path()
                .join(format!("fallback-{mode}-{seed}.trace.jsonl"))
                .exists());
        }
    }
    let cmp = std::fs::read_to_string(dir.path().join("comparative.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 3, "{cmp}");
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn unreadable_trace_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.trace.jsonl");
    std::fs::write(&p, "{\"type\":\"event\"}\n").unwrap();
    assert_eq!(
        code(&waan(&["report", path(&p), "--out", path(dir.path())])),
        1
    );
}
