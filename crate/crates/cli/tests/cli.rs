use std::path::Path;
use std::process::{Command, Output};

use stance_core::stream::read_trajectory;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stance-odom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path, preset: &str) -> (String, String) {
    let (log, gt) = (path(dir, "log.jsonl"), path(dir, "gt.csv"));
    let out = run(&["simulate", "--preset", preset, "--out", &log, "--ground-truth", &gt]);
    assert!(out.status.success(), "{}", stderr(&out));
    (log, gt)
}

#[test]
fn simulated_loop_replays_to_closure() {
    let dir = tempfile::tempdir().unwrap();
    let (log, gt) = simulate(dir.path(), "flat_loop");
    let traj = path(dir.path(), "traj.csv");
    let out = run(&["replay", "--log", &log, "--out", &traj, "--ground-truth", &gt]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("traj.diag.jsonl").exists());

    let states = read_trajectory(std::fs::read(&traj).unwrap().as_slice()).unwrap();
    let closure = states.last().unwrap().position - states[0].position;
    assert!(closure.norm() <= 1e-6, "closure {}", closure.norm());

    let out = run(&["metrics", &traj]);
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(metrics["e_xy"].as_f64().unwrap() <= 1e-6);
    assert!(metrics["mae"].is_null());
}

#[test]
fn truncated_log_exits_2_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (log, _) = simulate(dir.path(), "wheel_bob");
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().take(5).collect();
    let cut = &lines[4][..lines[4].len() / 2];
    lines[4] = cut;
    let bad = path(dir.path(), "bad.jsonl");
    std::fs::write(&bad, lines.join("\n")).unwrap();

    let out = run(&["replay", "--log", &bad, "--out", &path(dir.path(), "t.csv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 5"), "{}", stderr(&out));
}

#[test]
fn empty_log_writes_header_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    let log = path(dir.path(), "empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let traj = path(dir.path(), "t.csv");
    let out = run(&["replay", "--log", &log, "--out", &traj]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("warning"));
    assert_eq!(std::fs::read_to_string(&traj).unwrap(), "stamp,x,y,z,roll,pitch,yaw,vx,vy,vz\n");
}

#[test]
fn invalid_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let log = path(dir.path(), "empty.jsonl");
    std::fs::write(&log, "").unwrap();
    for text in ["height.t_fade = -1\n", "contact.threshold = 3\n", "leg.0.side = 0\n"] {
        let cfg = path(dir.path(), "bad.cfg");
        std::fs::write(&cfg, text).unwrap();
        let out = run(&["replay", "--log", &log, "--config", &cfg, "--out", &path(dir.path(), "t.csv")]);
        assert_eq!(out.status.code(), Some(3), "{text}: {}", stderr(&out));
    }
}

#[test]
fn replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let log = path(dir.path(), "log.jsonl");
    let out = run(&["simulate", "--preset", "standing_drift", "--out", &log, "--encoder-quantum", "0.001"]);
    assert!(out.status.success());
    let (a, b) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"));
    assert!(run(&["replay", "--log", &log, "--out", &a]).status.success());
    assert!(run(&["replay", "--log", &log, "--out", &b]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn metrics_against_identical_truth_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = simulate(dir.path(), "wheel_bob");
    let out = run(&["metrics", &gt, "--ground-truth", &gt]);
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for (_, v) in metrics["mae"].as_object().unwrap() {
        assert_eq!(v.as_f64(), Some(0.0));
    }
}

#[test]
fn wheel_plan_with_generated_config() {
    let dir = tempfile::tempdir().unwrap();
    let (log, cfg) = (path(dir.path(), "log.jsonl"), path(dir.path(), "robot.cfg"));
    let out = run(&["simulate", "--preset", "wheel_roll", "--out", &log, "--config-out", &cfg]);
    assert!(out.status.success());
    let traj = path(dir.path(), "t.csv");
    assert!(run(&["replay", "--log", &log, "--config", &cfg, "--out", &traj]).status.success());
    let states = read_trajectory(std::fs::read(&traj).unwrap().as_slice()).unwrap();
    assert!((states.last().unwrap().position.x - 5.0).abs() < 1e-9);
}

#[test]
fn plan_file_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let plan = path(dir.path(), "walk.plan");
    std::fs::write(
        &plan,
        "# short walk\nwaypoint = stand smooth 0.5 0 0 0 0\nwaypoint = walk smooth 3 1 0 0 0\n",
    )
    .unwrap();
    let log = path(dir.path(), "log.jsonl");
    let out = run(&["simulate", "--plan", &plan, "--out", &log]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = run(&["inspect", "--log", &log, "--at", "2.0"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["diagnostics"]["stamp"].as_f64().unwrap() <= 2.0);
    assert_eq!(report["diagnostics"]["planes"].as_array().unwrap().len(), 1);
    assert_eq!(report["diagnostics"]["anchors"].as_array().unwrap().len(), 4);

    std::fs::write(&plan, "waypoint = stand smooth 1 0 0 0.5 0\n").unwrap();
    let out = run(&["simulate", "--plan", &plan, "--out", &log]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("infeasible"), "{}", stderr(&out));
}
