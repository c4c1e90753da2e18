use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{Matrix3, Vector3};
use serde_json::Value;

use selfcal::formats::{parse_matches, write_gyro_csv};
use selfcal::gyro::constant_rate_samples;
use selfcal::pipeline::relative_k_error;

fn selfcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfcal")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(v: &Value) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| v[i][j].as_f64().unwrap())
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", s(dir)];
    args.extend_from_slice(extra);
    let out = selfcal(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_gyro(path: &Path, omega: Vector3<f64>) {
    let samples = constant_rate_samples(omega, 1.0, 200.0);
    write_gyro_csv(std::fs::File::create(path).unwrap(), &samples).unwrap();
}

#[test]
fn synth_is_byte_identical_under_a_fixed_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        synth(d, &["--seed", "21"]);
        synth(&d.join("bench"), &["--seed", "21", "--trials", "50", "--image-sigma", "0.5"]);
    }
    for f in ["matches.txt", "gyro.csv", "ground_truth.json", "bench/summary.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty() && x == y, "{f} differs");
    }
}

#[test]
fn default_synth_writes_twenty_matches_with_ground_truth_header() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    let text = std::fs::read_to_string(d.path().join("matches.txt")).unwrap();
    assert!(text.starts_with("# K_gt "));
    let m = parse_matches(&text).unwrap();
    assert_eq!(m.pairs.len(), 1);
    assert_eq!(m.pairs[0].points.len(), 20);
    assert!(m.k_gt.is_some());
}

#[test]
fn noise_free_benchmark_summary_is_accurate() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--trials", "200", "--image-sigma", "0"]);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["median_rel_k_error"].as_f64().unwrap() <= 1e-6);
    let csv = std::fs::read_to_string(d.path().join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
}

#[test]
fn calibrates_noise_free_matches_to_ground_truth() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--seed", "5"]);
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("ground_truth.json")).unwrap()).unwrap();
    let theta = truth["theta_deg"].as_f64().unwrap().to_string();
    let out = selfcal(&["calibrate", s(&d.path().join("matches.txt")), "--angle-deg", &theta, "--json"]);
    assert_eq!(code(&out), 0);
    let report = json(&out);
    assert_eq!(report["n_accepted"], 1);
    assert_eq!(report["pairs"][0]["status"], "accepted");
    let err = relative_k_error(&rows(&report["aggregate_k"]), &rows(&truth["k"]));
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn tau_and_angle_are_mutually_exclusive() {
    let out = selfcal(&["calibrate", "x.txt", "--tau", "2.9", "--angle-deg", "10"]);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot be used with"));
}

#[test]
fn small_rotation_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--angle-deg", "2"]);
    let out = selfcal(&["calibrate", s(&d.path().join("matches.txt")), "--angle-deg", "2", "--json"]);
    assert_eq!(code(&out), 2);
    let pair = &json(&out)["pairs"][0];
    assert_eq!(pair["status"], "angle_below_threshold");
    assert_eq!(pair["message"], "rejected: angle below threshold");
}

#[test]
fn principal_point_far_from_center_is_excluded() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--seed", "5"]);
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("ground_truth.json")).unwrap()).unwrap();
    let theta = truth["theta_deg"].as_f64().unwrap().to_string();
    let matches = d.path().join("matches.txt");
    // The true principal point is (640, 360); move the window 200 px away.
    let out = selfcal(&["calibrate", s(&matches), "--angle-deg", &theta, "--center", "840,360", "--json"]);
    assert_eq!(code(&out), 2);
    let report = json(&out);
    assert_eq!(report["n_accepted"], 0);
    assert!(report["aggregate_k"].is_null());
    assert_eq!(report["pairs"][0]["status"], "principal_point_outside_window");
    // A wide enough window accepts it again.
    let out = selfcal(&[
        "calibrate", s(&matches), "--angle-deg", &theta, "--center", "840,360", "--pp-window-px", "250",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn malformed_matches_exit_with_parse_status() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("bad.txt");
    std::fs::write(&path, "1 2 3 4\n1 2 three 4\n").unwrap();
    let out = selfcal(&["calibrate", s(&path), "--angle-deg", "10"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    // Missing rotation information is also an input error.
    std::fs::write(&path, "1 2 3 4\n").unwrap();
    assert_eq!(code(&selfcal(&["calibrate", s(&path)])), 3);
    assert_eq!(code(&selfcal(&["calibrate", s(&d.path().join("missing.txt")), "--tau", "2"])), 3);
}

#[test]
fn gyro_constant_rate_about_z() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("gyro.csv");
    write_gyro(&path, Vector3::new(0.0, 0.0, 0.5));
    let out = selfcal(&["gyro", s(&path), "--json"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!((v["theta_deg"].as_f64().unwrap() - 28.6479).abs() < 1e-4);
    assert!((v["theta_deg"].as_f64().unwrap() - 0.5f64.to_degrees()).abs() < 1e-6);
    assert!((v["tau"].as_f64().unwrap() - (1.0 + 2.0 * 0.5f64.cos())).abs() < 1e-12);
    assert_eq!(v["n_samples"], 201);
}

#[test]
fn gyro_zero_rate_is_identity() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("gyro.csv");
    write_gyro(&path, Vector3::zeros());
    let v = json(&selfcal(&["gyro", s(&path), "--json"]));
    assert_eq!(v["theta_deg"], 0.0);
    assert_eq!(v["tau"], 3.0);
}

#[test]
fn gyro_window_and_errors() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("gyro.csv");
    write_gyro(&path, Vector3::new(0.0, 0.0, 0.5));
    let v = json(&selfcal(&["gyro", s(&path), "--t-start", "0.5", "--t-end", "1", "--json"]));
    assert!((v["theta_deg"].as_f64().unwrap() - 0.25f64.to_degrees()).abs() < 1e-9);
    assert_eq!(code(&selfcal(&["gyro", s(&path), "--t-start", "5"])), 2);
    std::fs::write(&path, "time,x,y,z\n0,0,0,0\n").unwrap();
    assert_eq!(code(&selfcal(&["gyro", s(&path)])), 3);
}
