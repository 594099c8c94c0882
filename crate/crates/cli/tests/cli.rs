use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nrdf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrdf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_model(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const MEMORYLESS: &str = r#"{"dims": {"m": 1, "k": 1, "p": 1, "d": 1}, "A": [0], "B": [0], "C": [1], "N": [1]}"#;
const AR1: &str = r#"{"dims": {"m": 1, "k": 1, "p": 1, "d": 1}, "A": [0.9], "B": [1], "C": [1], "N": [0.1]}"#;
const TWO_DIM: &str = r#"{"dims": {"m": 2, "k": 2, "p": 2, "d": 2},
  "A": [0.9, 0.2, -0.1, 0.6], "B": [1, 0, 0.3, 0.8], "C": [1, 0, 0.5, 1], "N": [0.3, 0, 0, 0.5]}"#;

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn bsms_curve_endpoints_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let o = nrdf(&["bsms-curve", "--p", "0.25", "--D-grid", "0:0.01:0.5", "--out", "fig1.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
    let (header, rows) = parse_csv(&text);
    assert_eq!(header, ["D", "R_na", "R_classical", "SLB", "RL_bound"]);
    assert_eq!(rows.len(), 51);
    assert_eq!(rows[0][1], "0.811278124459");
    assert_eq!(rows[50][0], "0.5");
    assert_eq!(rows[50][1], "0");
    // classical and rate-loss columns only up to the critical distortion (0.0286 at p = 0.25)
    assert!(!rows[2][2].is_empty() && rows[3][2].is_empty() && rows[3][4].is_empty());
    let plot = fs::read_to_string(dir.path().join("fig1.gp")).unwrap();
    assert!(plot.contains("'fig1.csv' using 1:2"));
}

#[test]
fn bsms_curve_iid_case() {
    let dir = tempfile::tempdir().unwrap();
    let o = nrdf(&["bsms-curve", "--p", "0.5", "--D-grid", "0:0.05:0.5"], dir.path());
    assert_eq!(code(&o), 0);
    let (_, rows) = parse_csv(&String::from_utf8(o.stdout).unwrap());
    for row in rows {
        let d: f64 = row[0].parse().unwrap();
        let r: f64 = row[1].parse().unwrap();
        let h = if d == 0.0 { 0.0 } else { -d * d.log2() - (1.0 - d) * (1.0 - d).log2() };
        assert!((r - (1.0 - h)).abs() < 1e-11, "D={d}");
    }
}

#[test]
fn repeated_runs_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.json", TWO_DIM);
    for args in [
        vec!["bsms-curve", "--p", "0.25", "--D-grid", "0:0.01:0.5"],
        vec!["gauss", "--model", &model, "--D-grid", "0.5,1", "--horizon", "20000", "--seed", "9"],
    ] {
        let a = nrdf(&args, dir.path());
        let b = nrdf(&args, dir.path());
        assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout);
    }
}

#[test]
fn bsms_verify_passes_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = nrdf(&["bsms-verify", "--p", "0.3", "--D-grid", "0.15", "--tol", "1e-3"], dir.path());
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("0.332842884"), "{out}");
    assert!(out.contains("pass"));

    let o = nrdf(&["bsms-verify", "--p", "0.25", "--D-grid", "0.05:0.05:0.45", "--out", "v.json", "--format", "json"], dir.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 9);

    // an impossible tolerance turns every row into a failure
    let o = nrdf(&["bsms-verify", "--p", "0.3", "--D-grid", "0.15", "--tol", "1e-30"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn gauss_memoryless_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.json", MEMORYLESS);
    let o = nrdf(&["gauss", "--model", &model, "--D-grid", "0.25,1", "--out", "res/g", "--seed", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("res/g.json")).unwrap()).unwrap();
    let pts = v["points"].as_array().unwrap();
    assert!((pts[0]["rate"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let sim = pts[0]["sim_distortion"].as_f64().unwrap();
    assert!((sim - 0.25).abs() / 0.25 < 0.02);
    assert_eq!(pts[1]["rate"].as_f64().unwrap(), 0.0);
    assert!(v["tolerance"].is_number());
    let (header, rows) = parse_csv(&fs::read_to_string(dir.path().join("res/g.csv")).unwrap());
    assert_eq!(header[0], "D");
    assert_eq!(rows.len(), 2);
    assert!(dir.path().join("res/g.gp").exists());
}

#[test]
fn gauss_two_dim_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.json", TWO_DIM);
    let o = nrdf(
        &["gauss", "--model", &model, "--D-grid", "0.2:0.2:4", "--horizon", "5000", "--format", "csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = parse_csv(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(rows.len(), 20);
    let rates: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn model_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // unstable and unexcited: not stabilizable
    let bad = write_model(
        dir.path(),
        "bad.json",
        r#"{"dims": {"m": 1, "k": 1, "p": 1, "d": 1}, "A": [1.5], "B": [0], "C": [1], "N": [1]}"#,
    );
    let o = nrdf(&["gauss", "--model", &bad, "--D-grid", "0.5"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stabilizable"));

    let shape = write_model(
        dir.path(),
        "shape.json",
        r#"{"dims": {"m": 2, "k": 1, "p": 1, "d": 1}, "A": [1], "B": [0], "C": [1], "N": [1]}"#,
    );
    let o = nrdf(&["rate-loss", "--model", &shape, "--D-grid", "0.5"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("model"));

    let o = nrdf(&["bsms-curve", "--p", "1.5", "--D-grid", "0.1"], dir.path());
    assert_eq!(code(&o), 1);
    let o = nrdf(&["bsms-curve", "--p", "0.25", "--D-grid", "0:0.1:0.7"], dir.path());
    assert_eq!(code(&o), 1);
    let o = nrdf(&["bsms-curve", "--p", "0.25"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("D_grid"));
}

#[test]
fn non_convergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // a spectral peak narrower than the finest quadrature grid
    let peaked = write_model(
        dir.path(),
        "peak.json",
        r#"{"dims": {"m": 1, "k": 1, "p": 1, "d": 1}, "A": [0.9999999], "B": [1], "C": [1], "N": [0.01]}"#,
    );
    let o = nrdf(&["rate-loss", "--model", &peaked, "--D-grid", "100"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn rate_loss_columns() {
    let dir = tempfile::tempdir().unwrap();
    let ml = write_model(dir.path(), "ml.json", MEMORYLESS);
    let o = nrdf(&["rate-loss", "--model", &ml, "--D-grid", "0.1,0.25,0.5,1"], dir.path());
    assert_eq!(code(&o), 0);
    let (header, rows) = parse_csv(&String::from_utf8(o.stdout).unwrap());
    assert_eq!(header, ["D", "R_na", "R_classical", "RL"]);
    for row in &rows {
        assert!(row[3].parse::<f64>().unwrap().abs() < 1e-9);
    }
    assert_eq!(rows[3][1], "0");
    assert_eq!(rows[3][2], "0");

    let ar = write_model(dir.path(), "ar.json", AR1);
    let o = nrdf(&["rate-loss", "--model", &ar, "--D-grid", "0.1,0.5,1,2", "--out", "rl.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = parse_csv(&fs::read_to_string(dir.path().join("rl.csv")).unwrap());
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() > 0.0));
    assert!(dir.path().join("rl.gp").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"p": 0.25, "D_grid": "0:0.1:0.5", "format": "json"}"#,
    )
    .unwrap();
    let o = nrdf(&["--config", "run.json", "bsms-curve"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);

    let o = nrdf(&["--config", "run.json", "bsms-curve", "--D-grid", "0.1", "--format", "csv"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);

    fs::write(dir.path().join("bad.json"), r#"{"p": 0.25, "Dgrid": "0:0.1:0.5"}"#).unwrap();
    let o = nrdf(&["--config", "bad.json", "bsms-curve"], dir.path());
    assert_eq!(code(&o), 1);
}
