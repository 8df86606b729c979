use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use histomix::io::Metadata;
use histomix::modelsel::SelectionReport;
use histomix::MixtureParams;

fn histomix(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histomix"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("HISTOMIX_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn simulate(dir: &Path, n: &str) -> String {
    let out = histomix(dir, &["simulate", "--scenario", "sim1", "--n", n, "--seed", "11"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("sample.csv").to_str().unwrap().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&histomix(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&histomix(tmp.path(), &["--version"])), 0);
    for sub in ["simulate", "fit", "select", "risk", "table2", "efficiency"] {
        assert_eq!(code(&histomix(tmp.path(), &[sub, "--help"])), 0, "{sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&histomix(d, &["simulate", "--n", "10"])), 2, "missing seed");
    assert_eq!(code(&histomix(d, &["simulate", "--scenario", "sim9", "--n", "10", "--seed", "1"])), 2);
    assert_eq!(code(&histomix(d, &["bogus"])), 2);
    assert_eq!(code(&histomix(d, &["risk", "--n", "50", "--seed", "1", "--metric", "l1"])), 2);
    let sample = simulate(d, "30");
    assert_eq!(code(&histomix(d, &["select", "--data", &sample, "--scheme", "Z9", "--seed", "1"])), 2);
    assert_eq!(code(&histomix(d, &["fit", "--data", &sample, "--k", "2", "--seed", "1", "--restarts", "0"])), 2);
}

#[test]
fn bad_inputs_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let missing = d.join("nope.csv");
    assert_eq!(code(&histomix(d, &["fit", "--data", missing.to_str().unwrap(), "--seed", "1"])), 3);
    let bad = d.join("bad.csv");
    fs::write(&bad, "x1,x2,x3\n0.1,0.2,1.5\n").unwrap();
    let out = histomix(d, &["fit", "--data", bad.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(code(&out), 3);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn simulate_writes_sample_labels_and_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "25");
    let sample = fs::read_to_string(tmp.path().join("sample.csv")).unwrap();
    let mut lines = sample.lines();
    assert_eq!(lines.next(), Some("x1,x2,x3"));
    assert_eq!(lines.count(), 25);
    let labels = fs::read_to_string(tmp.path().join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 26);

    let meta: Metadata =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("sample.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta.command, "simulate");
    assert_eq!(meta.seed, 11);
    assert_eq!(meta.config_hash.len(), 64);
    assert_eq!(meta.config_hash, histomix::io::config_hash(&meta.config).unwrap());
}

#[test]
fn fit_reports_sorted_weights_and_loadable_params() {
    let tmp = tempfile::tempdir().unwrap();
    let sample = simulate(tmp.path(), "150");
    let out = histomix(tmp.path(), &["fit", "--data", &sample, "--k", "2", "--p", "3", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("fit.json")).unwrap()).unwrap();
    let theta: Vec<f64> = serde_json::from_value(fit["theta"].clone()).unwrap();
    assert_eq!(theta.len(), 2);
    assert!(theta[0] <= theta[1]);
    assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(fit["restart_logliks"].as_array().unwrap().len(), 20);

    let params = MixtureParams::from_text(&fs::read_to_string(tmp.path().join("fit_params.txt")).unwrap()).unwrap();
    assert_eq!(params.theta(), theta.as_slice());
    assert_eq!(params.bins(), 8);
}

#[test]
fn select_report_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let sample = simulate(tmp.path(), "120");
    let out = histomix(tmp.path(), &["select", "--data", &sample, "--scheme", "D2", "--restarts", "3", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = SelectionReport::from_json(&fs::read_to_string(tmp.path().join("selection.json")).unwrap()).unwrap();
    assert_eq!(report.n, 120);
    let best = report
        .candidates
        .iter()
        .filter_map(|c| c.criterion)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report.candidates[report.chosen].criterion, Some(best));
}

#[test]
fn risk_and_table2_csv_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = histomix(d, &["risk", "--n", "40", "--reps", "10", "--p-min", "2", "--p-max", "4", "--restarts", "2", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("risk_curve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "P,risk,bias2,var,se");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("2,"));

    let out = histomix(
        d,
        &["table2", "--scenario", "sim1,sim3", "--n", "60", "--reps", "4", "--schemes", "D3,V1", "--p-max", "3", "--restarts", "2", "--seed", "4"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("table2.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(labels, ["oracle_min", "reference", "D3", "V1", "oracle_min", "reference", "D3", "V1"]);
}

#[test]
fn toml_config_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, "n = 7\nseed = 99\n").unwrap();
    let out = histomix(d, &["--config", cfg.to_str().unwrap(), "simulate", "--n", "500", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(d.join("sample.csv")).unwrap().lines().count(), 8);
    let meta: Metadata =
        serde_json::from_str(&fs::read_to_string(d.join("sample.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta.seed, 99);
}

#[test]
fn efficiency_rows_cover_each_n() {
    let tmp = tempfile::tempdir().unwrap();
    let out = histomix(tmp.path(), &["efficiency", "--n", "100,300", "--reps", "12", "--restarts", "2", "--seed", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("efficiency.csv")).unwrap();
    let ns: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["100", "300"]);
}
