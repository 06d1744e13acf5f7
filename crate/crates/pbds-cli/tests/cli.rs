//! End-to-end checks of the command-line front end: exit codes, report
//! files, CSV determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pbds"))
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../pbds/scenarios")
        .join(name)
}

fn write_temp(name: &str, content: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pbds-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

/// A quick scenario: flat manifold, closed-form behavior, tiny horizon.
fn quick_scenario() -> String {
    r#"{
      "name": "quick",
      "manifold": { "kind": "euclidean", "dim": 2 },
      "tasks": [
        { "type": "attractor", "goal": [0.0, 0.0] },
        { "type": "damping", "c": 3.0 }
      ],
      "initial": { "position": [1.0, 0.5], "velocity": [0.0, 0.0] },
      "integrator": { "dt": 0.001, "horizon": 0.25, "chart_scheme": { "fixed": 0 } },
      "engine": "pbds"
    }"#
    .to_string()
}

#[test]
fn run_writes_report_and_csv() {
    let scenario = write_temp("quick.json", &quick_scenario());
    let out = scenario.parent().unwrap().join("out_run");
    let status = bin()
        .args(["run"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in [
        "final_goal_distance",
        "min_obstacle_distance",
        "lyapunov_violations",
        "evals_per_second",
        "converged",
    ] {
        assert!(report.get(key).is_some(), "report is missing `{key}`");
    }
    let csv = std::fs::read_to_string(out.join("quick_run0.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,chart_id,q1,q2,v1,v2,e1,e2,V");
    assert_eq!(csv.lines().count(), 252); // header + 251 states
}

#[test]
fn malformed_scenario_exits_2() {
    let path = write_temp("broken.json", "{ not json");
    let status = bin().args(["run"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // schema violation: unknown task type
    let path = write_temp(
        "bad_task.json",
        r#"{"name":"x","manifold":{"kind":"sphere2"},
            "tasks":[{"type":"vortex"}],
            "initial":{"position":[0.0,0.0,1.0]},
            "integrator":{"dt":0.001,"horizon":1.0}}"#,
    );
    let status = bin().args(["run"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn collision_start_exits_3() {
    // initial position inside an obstacle: constraint distance <= 0 aborts
    let path = write_temp(
        "collide.json",
        r#"{
          "name": "collide",
          "manifold": { "kind": "sphere2" },
          "tasks": [
            { "type": "damping", "c": 4.0 },
            { "type": "obstacle", "center": [1.0, 0.0, 0.0], "radius": 0.3,
              "a": 2.0, "b": 2.0, "beta": null }
          ],
          "initial": { "position": [1.0, 0.0, 0.0] },
          "integrator": { "dt": 0.001, "horizon": 0.5 }
        }"#,
    );
    let out = path.parent().unwrap().join("out_collide");
    let status = bin()
        .args(["run"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn failed_assertion_exits_4() {
    // an unreachable goal-distance bound over a tiny horizon
    let mut scenario: serde_json::Value = serde_json::from_str(&quick_scenario()).unwrap();
    scenario["asserts"] = serde_json::json!({ "final_goal_distance": 1e-9 });
    let path = write_temp("assert.json", &scenario.to_string());
    let out = path.parent().unwrap().join("out_assert");
    let status = bin()
        .args(["run"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn csv_output_is_deterministic() {
    let scenario = write_temp("det.json", &quick_scenario());
    let (a, b) = (
        scenario.parent().unwrap().join("det_a"),
        scenario.parent().unwrap().join("det_b"),
    );
    for out in [&a, &b] {
        let status = bin()
            .args(["run"])
            .arg(&scenario)
            .arg("--out")
            .arg(out)
            .args(["--seed", "5"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    // the explicit velocity plus the seeded start give two runs each
    for run in ["quick_run0.csv", "quick_run1.csv"] {
        let csv_a = std::fs::read(a.join(run)).unwrap();
        let csv_b = std::fs::read(b.join(run)).unwrap();
        assert_eq!(csv_a, csv_b, "same scenario and seed must give bit-identical CSV");
    }
}

#[test]
fn consistency_requires_multiple_charts() {
    let path = write_temp("flat.json", &quick_scenario());
    let output = bin().args(["consistency"]).arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("multi-chart"), "stderr: {stderr}");
}

#[test]
fn tree_engine_agrees_with_flat_on_the_first_step() {
    let scenario = write_temp("tree.json", &quick_scenario());
    let out = scenario.parent().unwrap().join("out_tree");
    let status = bin()
        .args(["run"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .args(["--engine", "pbds_tree"])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn consistency_passes_on_the_bundled_sphere_scenario() {
    let output = bin()
        .args(["consistency"])
        .arg(scenario_path("sphere_attractor.json"))
        .args(["--horizon", "1.0"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!(report["max_pairwise"].as_f64().unwrap() < 1e-6);
}

#[test]
fn bench_zero_iterations_is_empty_success() {
    let path = write_temp("bench.json", &quick_scenario());
    let output = bin()
        .args(["bench"])
        .arg(&path)
        .args(["--iters", "0"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["iterations"], 0);
    assert!(report["flat"].is_null());
}
