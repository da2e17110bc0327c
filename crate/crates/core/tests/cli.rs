use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SCENARIO: &str = r#"{
  "markov": {"lambda": 0.2, "mu": 0.3},
  "radio": {"p_tx_dbm": 30, "p_th_dbm": -90},
  "propagation": {"basic_model": "free_space", "clutter_model": "none"},
  "primary": {"h_tx_m": 30, "freq_mhz": 1000},
  "users": [
    {"id": "near", "distance_km": 5, "h_rx_m": 30},
    {"id": "far", "distance_km": 50, "h_rx_m": 30}
  ],
  "run": {"n_steps": 200, "mode": "monte_carlo", "seed": 7}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specpredict"))
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, text).unwrap();
    path
}

fn predict(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["predict", "--scenario"])
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_column(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect()
}

#[test]
fn predict_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let out = dir.path().join("out");
    let o = predict(&scenario, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let near = fs::read_to_string(out.join("timelines/near.csv")).unwrap();
    assert!(near.starts_with("step,state\n1,"));
    assert_eq!(near.lines().count(), 201);
    assert!(csv_column(&out.join("timelines/far.csv")).iter().all(|v| v == "0"));

    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["run"]["seed"], 7);
    assert_eq!(summary["users"][0]["range"], "in_range");
    assert_eq!(summary["users"][1]["range"], "out_of_range");
    assert_eq!(summary["users"][1]["availability_fraction"], 1.0);
    assert_eq!(summary["stats"]["loss_evaluations"], 2);
    assert_eq!(summary["stats"]["threshold_comparisons"], 200);
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().starts_with('.'))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn summary_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let out = dir.path().join("out");
    assert!(predict(&scenario, &out, &["--seed", "11", "--n-steps", "50"])
        .status
        .success());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["overrides"]["seed"], 11);
    let echoed = dir.path().join("echo.json");
    fs::write(&echoed, summary["scenario"].to_string()).unwrap();

    let again = dir.path().join("again");
    assert!(predict(&echoed, &again, &[]).status.success());
    assert_eq!(
        fs::read(out.join("timelines/near.csv")).unwrap(),
        fs::read(again.join("timelines/near.csv")).unwrap()
    );
}

#[test]
fn seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(predict(&scenario, &a, &["--seed", "1"]).status.success());
    assert!(predict(&scenario, &b, &["--seed", "2"]).status.success());
    assert_ne!(
        fs::read(a.join("timelines/near.csv")).unwrap(),
        fs::read(b.join("timelines/near.csv")).unwrap()
    );
}

#[test]
fn replicas_and_streaming_agree() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let (mem, stream) = (dir.path().join("mem"), dir.path().join("stream"));
    assert!(predict(&scenario, &mem, &["--replicas", "5"]).status.success());
    let o = predict(&scenario, &stream, &["--replicas", "5", "--stream-threshold", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for rel in [
        "timelines/r0/near.csv",
        "timelines/r4/far.csv",
        "ensemble/near.csv",
        "ensemble/far.csv",
    ] {
        assert_eq!(
            fs::read(mem.join(rel)).unwrap(),
            fs::read(stream.join(rel)).unwrap(),
            "{rel}"
        );
    }
    let freq = fs::read_to_string(mem.join("ensemble/near.csv")).unwrap();
    assert!(freq.starts_with("step,occupancy_freq\n"));
}

#[test]
fn analytic_mode() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let out = dir.path().join("out");
    assert!(predict(&scenario, &out, &["--mode", "analytic"]).status.success());
    let near: Vec<f64> = csv_column(&out.join("timelines/near.csv"))
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(near.iter().all(|p| (p - 0.4).abs() < 1e-12));
    assert!(csv_column(&out.join("timelines/far.csv")).iter().all(|v| v == "0"));
}

#[test]
fn invalid_probability_is_reported_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &SCENARIO.replace("\"lambda\": 0.2", "\"lambda\": 1.5"));
    let out = dir.path().join("out");
    let o = predict(&scenario, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("markov.lambda"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn mobility_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCENARIO.replace("\"h_rx_m\": 30}", "\"h_rx_m\": 30, \"trajectory\": []}");
    let scenario = write_scenario(dir.path(), &text);
    let o = predict(&scenario, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("users[0].trajectory"), "{}", stderr(&o));
}

#[test]
fn refuses_non_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let o = predict(&scenario, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 1);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(predict(&scenario, &empty, &[]).status.success());
}

#[test]
fn missing_scenario_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = predict(&dir.path().join("nope.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn range_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SCENARIO);
    let o = bin().args(["range", "--scenario"]).arg(&scenario).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout), "23.851 km\n");

    let o = bin()
        .args(["range", "--d-min", "30", "--d-max", "60", "--scenario"])
        .arg(&scenario)
        .output()
        .unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), "ALWAYS_OUT\n");

    let o = bin()
        .args(["range", "--d-min", "9", "--d-max", "3", "--scenario"])
        .arg(&scenario)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    fs::write(&trace, "0,0,1,1,0,1\n").unwrap();
    let o = bin().args(["estimate", "--trace"]).arg(&trace).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.starts_with("lambda 0.666667\nmu 0.500000\n"), "{text}");

    fs::write(&trace, "0\n0\n0\n").unwrap();
    let o = bin().args(["estimate", "--trace"]).arg(&trace).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mu unidentifiable"));

    let o = bin()
        .args(["estimate", "--add-one", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(o.status.success());

    fs::write(&trace, "0\n1\n2\n").unwrap();
    let o = bin().args(["estimate", "--trace"]).arg(&trace).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"));
}

#[test]
fn stationary_subcommand() {
    let o = bin()
        .args(["stationary", "--lambda", "0.2", "--mu", "0.3"])
        .output()
        .unwrap();
    assert_eq!(
        String::from_utf8_lossy(&o.stdout),
        "pi_idle 0.600000\npi_active 0.400000\n"
    );
    let o = bin()
        .args(["stationary", "--lambda", "0", "--mu", "0"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
