use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hgmt(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hgmt"));
    cmd.current_dir(dir).args(args).env_remove("HGMT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().expect("summary line")).expect("summary is JSON")
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().expect("error line")).expect("error line is JSON")
}

const TWO_PLANES: &str = "n = 1\nk = 1\n[cloud]\nkind = \"two_planes\"\nresolution = 0.01\n";

#[test]
fn plane_then_cubes_then_carleson() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(hgmt(d, &["gen", "--output", "plane.json"], &[]).status.success());
    let cubes = hgmt(d, &["cubes", "--input", "plane.json", "--output", "tree.json"], &[]);
    assert_eq!(cubes.status.code(), Some(0));
    assert_eq!(summary(&cubes)["exact_ok"], Value::Bool(true));
    let car = hgmt(d, &["carleson", "--input", "plane.json", "--output", "carleson.json"], &[]);
    assert_eq!(car.status.code(), Some(0));
    let s = summary(&car);
    assert!(s["normalized_sum"].as_f64().unwrap() <= s["floor"].as_f64().unwrap());
    assert!(d.join("carleson.json").exists());
}

#[test]
fn param_on_two_planes_reports_constants() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tp.toml"), TWO_PLANES).unwrap();
    assert!(hgmt(d, &["gen", "--config", "tp.toml", "--output", "tp.json"], &[]).status.success());
    let out = hgmt(d, &["param", "--config", "tp.toml", "--input", "tp.json", "--output", "param.json"], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert!(s["coverage_ratio"].as_f64().unwrap().is_finite());
    assert!(s["bilip_lower"].as_f64().unwrap() > 0.0);
    let p: Value = serde_json::from_str(&std::fs::read_to_string(d.join("param.json")).unwrap()).unwrap();
    assert!(p["audit"]["bilip_upper"].as_f64().unwrap().is_finite());
}

#[test]
fn corrupt_json_exits_one_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), "{\"n\": 1, \"k\":").unwrap();
    let out = hgmt(d, &["cubes", "--input", "bad.json", "--output", "tree.json"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "parse");
    assert!(!d.join("tree.json").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "K0 = 10\nK = 5\n").unwrap();
    let out = hgmt(d, &["gen", "--config", "c.toml", "--output", "x.json"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "config");
    let out = hgmt(d, &["gen", "--output", "x.json"], &[("HGMT_THREADS", "0")]);
    assert_eq!(out.status.code(), Some(2));
    let out = hgmt(d, &["frobnicate"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn malformed_center_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(hgmt(d, &["gen", "--output", "plane.json"], &[]).status.success());
    let out = hgmt(d, &["carleson", "--input", "plane.json", "--center", "0,0"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "parse");
}

#[test]
fn csv_clouds_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(hgmt(d, &["gen", "--output", "plane.csv"], &[]).status.success());
    let text = std::fs::read_to_string(d.join("plane.csv")).unwrap();
    assert!(text.starts_with("x1,x2,x3,weight\n"));
    let out = hgmt(d, &["cubes", "--input", "plane.csv", "--output", "tree.json"], &[]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn artifacts_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tp.toml"), TWO_PLANES).unwrap();
    assert!(hgmt(d, &["gen", "--config", "tp.toml", "--output", "tp.json"], &[]).status.success());
    let one = hgmt(d, &["audit", "--config", "tp.toml", "--input", "tp.json", "--output", "a1.json"], &[("HGMT_THREADS", "1")]);
    let four = hgmt(d, &["audit", "--config", "tp.toml", "--input", "tp.json", "--output", "a4.json"], &[("HGMT_THREADS", "4")]);
    assert!(one.status.success() && four.status.success());
    assert_eq!(std::fs::read(d.join("a1.json")).unwrap(), std::fs::read(d.join("a4.json")).unwrap());
    let g1 = hgmt(d, &["graphify", "--config", "tp.toml", "--input", "tp.json", "--output", "g1.csv"], &[("HGMT_THREADS", "1")]);
    let g3 = hgmt(d, &["graphify", "--config", "tp.toml", "--input", "tp.json", "--output", "g3.csv"], &[("HGMT_THREADS", "3")]);
    assert!(g1.status.success() && g3.status.success());
    assert_eq!(std::fs::read(d.join("g1.csv")).unwrap(), std::fs::read(d.join("g3.csv")).unwrap());
}
