use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use ordcrowd::{next_question, ConstraintSet, EstimatorState, LossSpec, Policy, SelectionConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ordcrowd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn close(v: &Value, want: f64) -> bool {
    (v.as_f64().unwrap() - want).abs() <= 1e-9 * want.abs().max(1.0)
}

const CONFIG: &str = r#"n_vars = 5
truth = "explicit"
truth_values = [8.0, 7.0, 6.0, 5.0, 4.0]
worker_sd = 1.0
loss = "threshold"
tau = 6.5
policies = ["constrained"]
budget = 25
replicates = 3
seed = 4
"#;

#[test]
fn estimate_reports_the_projection() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.csv", "variable,value\n1,9\n2,7\n3,8\n");
    let out = json(&run(&["estimate", "--samples", s.to_str().unwrap(), "--constraints", "chain:3"]));
    let vars = out["variables"].as_array().unwrap();
    let v: Vec<f64> = vars.iter().map(|r| r["constrained_mean"].as_f64().unwrap()).collect();
    assert_eq!(v, [9.0, 7.5, 7.5]);
    assert_eq!(vars[1]["sample_mean"], 7.0);
}

#[test]
fn estimate_single_variable_fit() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.csv", "variable,value\n1,3\n1,5\n1,7\n");
    let out = json(&run(&["estimate", "--samples", s.to_str().unwrap(), "--constraints", "chain:1"]));
    let row = &out["variables"][0];
    assert!(close(&row["sample_mean"], 5.0));
    assert!(close(&row["sample_variance"], 8.0 / 3.0));
    assert!(close(&row["reestimated_variance"], 8.0 / 3.0));
}

#[test]
fn estimate_with_explicit_rows() {
    let dir = tempfile::tempdir().unwrap();
    // x2 <= x1 and x3 <= x1, no order between x2 and x3
    let rows = write(dir.path(), "rows.csv", "-1,1,0\n-1,0,1\n");
    let s = write(dir.path(), "s.csv", "variable,value\n1,5\n2,7\n3,4\n");
    let out = json(&run(&["estimate", "--samples", s.to_str().unwrap(), "--constraints", rows.to_str().unwrap()]));
    let v: Vec<f64> = out["variables"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["constrained_mean"].as_f64().unwrap())
        .collect();
    assert!((v[0] - 6.0).abs() < 1e-6 && (v[1] - 6.0).abs() < 1e-6 && (v[2] - 4.0).abs() < 1e-6, "{v:?}");
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.csv", "");
    let header = write(dir.path(), "header.csv", "variable,value\n");
    let outside = write(dir.path(), "outside.csv", "variable,value\n4,1\n");
    let e = empty.to_str().unwrap();
    for args in [
        vec!["estimate", "--samples", e, "--constraints", "chain:2"],
        vec!["estimate", "--samples", header.to_str().unwrap(), "--constraints", "chain:2"],
        vec!["estimate", "--samples", outside.to_str().unwrap(), "--constraints", "chain:3"],
        vec!["estimate", "--samples", e, "--constraints", "ladder:2"],
        vec!["next", "--samples", header.to_str().unwrap(), "--constraints", "chain:2", "--loss", "huber"],
        vec!["frobnicate"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn next_bootstraps_from_the_first_variable() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = write(dir.path(), "fresh.csv", "variable,value\n");
    for spec in ["chain:2", "chain:1"] {
        let out = json(&run(&[
            "next", "--samples", fresh.to_str().unwrap(), "--constraints", spec, "--loss", "threshold:6", "--mode", "constrained",
        ]));
        assert_eq!(out["variable"], 1);
    }
}

#[test]
fn next_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let answers = [(0, 9.0), (0, 9.4), (1, 7.0), (1, 7.8), (2, 8.0), (2, 7.2)];
    let mut text = String::from("variable,value\n");
    for (i, x) in answers {
        text.push_str(&format!("{},{x}\n", i + 1));
    }
    let s = write(dir.path(), "s.csv", &text);
    let out = json(&run(&[
        "--seed", "9", "next", "--samples", s.to_str().unwrap(), "--constraints", "chain:3", "--loss", "threshold:7.5",
        "--mode", "constrained",
    ]));

    let mut state = EstimatorState::new(ConstraintSet::chain(3));
    for (i, x) in answers {
        state.add_sample(i, x).unwrap();
    }
    let cfg = SelectionConfig {
        seed: 9,
        ..SelectionConfig::new(Policy::Constrained)
    };
    let want = next_question(&state, &[LossSpec::threshold(7.5); 3], &cfg).unwrap();
    assert_eq!(out["variable"], want.variable + 1);
    let scores = out["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 3);
    for (got, w) in scores.iter().zip(&want.scores) {
        assert!(close(got, *w), "{got} vs {w}");
    }
}

#[test]
fn interpolate_examples() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.csv", "index,mean,variance\n1,8,0\n5,4,0\n");
    let m = m.to_str().unwrap();
    let out = json(&run(&["interpolate", "--models", m, "--k", "3"]));
    assert_eq!(out["mean"], 6.0);
    assert!(close(&out["variance"], 0.8));
    assert_eq!(json(&run(&["interpolate", "--models", m, "--k", "4"]))["mean"], 5.0);
    assert_eq!(run(&["interpolate", "--models", m, "--k", "5"]).status.code(), Some(2));

    let flat = write(dir.path(), "flat.csv", "index,mean,variance\n2,5,0\n6,5,0\n");
    let out = json(&run(&["interpolate", "--models", flat.to_str().unwrap(), "--k", "4"]));
    assert_eq!(out["variance"], 0.0);
}

#[test]
fn simulate_writes_deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", CONFIG);
    let go = || {
        let st = bin().args(["simulate", "--config", cfg.to_str().unwrap()]).status().unwrap();
        assert!(st.success());
        (
            fs::read(dir.path().join("trace.csv")).unwrap(),
            fs::read(dir.path().join("summary.json")).unwrap(),
        )
    };
    let first = go();
    assert_eq!(first, go());

    let trace = String::from_utf8(first.0).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "step,variable,answer,true_loss,estimated_error,prediction_json");
    assert_eq!(lines.count(), 25);

    // re-serializing the summary reproduces it byte for byte
    let text = String::from_utf8(first.1).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&v).unwrap() + "\n", text);
    assert_eq!(v["policies"]["constrained"]["mean_loss"].as_array().unwrap().len(), 25);
    assert_eq!(v["config"]["seed"], 4);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", CONFIG);
    let trace_for = |seed: &str| {
        assert!(bin()
            .args(["--seed", seed, "simulate", "--config", cfg.to_str().unwrap()])
            .status()
            .unwrap()
            .success());
        fs::read(dir.path().join("trace.csv")).unwrap()
    };
    assert_ne!(trace_for("1"), trace_for("2"));
    let summary: Value = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 2);
}

#[test]
fn config_errors_point_at_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (CONFIG.replace("tau = 6.5\n", ""), "run.toml:5:"),
        (CONFIG.replace("seed = 4", "sede = 4"), "run.toml:10:"),
        (CONFIG.replace("loss = \"threshold\"", "loss = \"squared\""), "run.toml:6:"),
        (CONFIG.replace("[8.0, 7.0, 6.0, 5.0, 4.0]", "[8.0, 9.0, 6.0, 5.0, 4.0]"), "run.toml"),
        (CONFIG.replace("budget = 25", "budget = \"many\""), "run.toml:8:"),
    ];
    for (text, anchor) in cases {
        let cfg = write(dir.path(), "run.toml", &text);
        let out = bin().args(["simulate", "--config", cfg.to_str().unwrap()]).output().unwrap();
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{err}");
        assert!(err.contains(anchor), "{anchor} not in {err}");
    }
}
