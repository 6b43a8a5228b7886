use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_upliftlab")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    serde_json::from_str(err.trim_end()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let model = dir.path().join("model.json");
    let trace = dir.path().join("trace.csv");
    let report = dir.path().join("report");

    let gen = stdout_json(&run(&["generate", "--scenario", "2", "--seed", "4", "--n", "800", "--out", s(&data)]));
    assert_eq!(gen["rows"], 800);
    assert_eq!(gen["covariates"], 100);

    let fit = stdout_json(&run(&[
        "train", "--data", s(&data), "--arch", "hidden1", "--hidden", "6", "--loss", "loglik",
        "--eta", "0.1", "--lambda1", "0.001", "--lambda2", "0.001", "--reg", "l1", "--epochs", "3",
        "--batch-size", "64", "--seed", "2", "--model-out", s(&model), "--trace-out", s(&trace),
    ]));
    assert_eq!(fit["epochs"], 3);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("epoch,loss,l1,l2,active_nodes,zero_weights\n"));
    assert_eq!(trace_text.lines().count(), 4);

    let eval = stdout_json(&run(&[
        "evaluate", "--model", s(&model), "--data", s(&data), "--bins", "5", "--grid", "10", "--report-out", s(&report),
    ]));
    assert!(eval["q_adj"].as_f64().unwrap() >= 0.0 || eval["q_hat"].as_f64().unwrap() <= 0.0);
    let curve = std::fs::read_to_string(report.join("qini_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 12);
    let summary = std::fs::read_to_string(report.join("qini_summary.csv")).unwrap();
    assert!(summary.starts_with("q_hat,rho_hat,q_adj,K,J,warnings\n"));
}

#[test]
fn benchmark_from_grid_file_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.txt");
    std::fs::write(&grid, "eta = 0.1\nlambda2 = 0, 0.001\nloss = uplift, bce\nepochs = 4\n").unwrap();
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let res = stdout_json(&run(&[
            "benchmark", "--scenario", "1", "--n", "1200", "--runs", "2", "--seed", "3",
            "--grid-file", s(&grid), "--out-dir", s(&out),
        ]));
        assert_eq!(res["methods"].as_array().unwrap().len(), 2);
        for file in ["summary.csv", "runs.csv", "curve_interaction-uplift.csv", "curve_interaction-bce.csv"] {
            assert!(out.join(file).exists(), "{file}");
        }
        summaries.push(std::fs::read(out.join("summary.csv")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn benchmark_accepts_csv_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    stdout_json(&run(&["generate", "--scenario", "1", "--n", "900", "--out", s(&data)]));
    let grid = dir.path().join("grid.txt");
    std::fs::write(&grid, "eta = 0.1\nlambda2 = 0\nloss = uplift\nepochs = 3\n").unwrap();
    let res = stdout_json(&run(&[
        "benchmark", "--data", s(&data), "--runs", "1", "--grid-file", s(&grid), "--out-dir", s(&dir.path().join("o")),
    ]));
    assert_eq!(res["runs"], 1);
}

#[test]
fn failures_are_single_line_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x1,t,y\n0.5,1,0\n0.1,2,1\n").unwrap();
    let err = error_json(&run(&["train", "--data", s(&bad), "--model-out", s(&dir.path().join("m"))]));
    assert_eq!(err["error"], "csv");
    assert!(err["message"].as_str().unwrap().contains("row 2"));

    let err = error_json(&run(&["generate", "--scenario", "7", "--out", s(&dir.path().join("x.csv"))]));
    assert_eq!(err["error"], "invalid_argument");

    let err = error_json(&run(&["frobnicate"]));
    assert_eq!(err["error"], "usage");

    let err = error_json(&run(&["benchmark", "--out-dir", "x"]));
    assert_eq!(err["error"], "usage");

    let err = error_json(&run(&["evaluate", "--model", s(&dir.path().join("none.json")), "--data", s(&bad)]));
    assert_eq!(err["error"], "io");

    let grid = dir.path().join("grid.txt");
    std::fs::write(&grid, "eta = quick\n").unwrap();
    let err = error_json(&run(&["benchmark", "--scenario", "1", "--grid-file", s(&grid), "--out-dir", "x"]));
    assert_eq!(err["error"], "invalid_argument");
}

#[test]
fn help_exits_cleanly() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("benchmark"));
}
