use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hyperqst(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperqst")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const QUTRIT_STATE: &str = r#""state": {"d": 3, "alpha": [0.7071067811865476, 0.0], "beta": [0.7071067811865476, 0.0],
  "gamma": [[0.5773502691896258, 0.0], [0.5773502691896258, 0.0], [0.5773502691896258, 0.0]]}"#;

#[test]
fn protocol_files_have_the_expected_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = hyperqst(d, &["protocol", "--out", "q2.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("128 settings"));
    assert_eq!(read_json(&d.join("q2.json"))["protocol"]["settings"].as_array().unwrap().len(), 128);

    write(d, "q3.json", &format!(r#"{{{QUTRIT_STATE}, "protocol": {{"kind": "qutrit720"}}}}"#));
    for name in ["a.json", "b.json"] {
        assert_eq!(code(&hyperqst(d, &["protocol", "--config", "q3.json", "--seed", "7", "--out", name, "--quiet"])), 0);
    }
    let a = std::fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(read_json(&d.join("a.json"))["protocol"]["settings"].as_array().unwrap().len(), 720);

    let g = 0.5;
    write(
        d,
        "d4.json",
        &format!(
            r#"{{"state": {{"d": 4, "alpha": [0.7071067811865476, 0.0], "beta": [0.7071067811865476, 0.0],
              "gamma": [[{g}, 0.0], [{g}, 0.0], [{g}, 0.0], [{g}, 0.0]]}}, "protocol": {{"kind": "random"}}}}"#
        ),
    );
    assert_eq!(code(&hyperqst(d, &["protocol", "--config", "d4.json", "--out", "d4p.json", "--quiet"])), 0);
    assert_eq!(read_json(&d.join("d4p.json"))["protocol"]["settings"].as_array().unwrap().len(), 8 * 10 * 16);

    // custom protocol files round-trip through the config
    write(d, "custom.json", r#"{"protocol": {"kind": "file", "path": "q2.json"}}"#);
    assert_eq!(code(&hyperqst(d, &["protocol", "--config", "custom.json", "--out", "q2b.json", "--quiet"])), 0);
    assert_eq!(std::fs::read(d.join("q2.json")).unwrap(), std::fs::read(d.join("q2b.json")).unwrap());
}

#[test]
fn invalid_configurations_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "mismatch.json", &format!(r#"{{{QUTRIT_STATE}, "protocol": {{"kind": "qubit128"}}}}"#));
    let out = hyperqst(d, &["protocol", "--config", "mismatch.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("qubit128 needs d = 2"));

    write(d, "missing.json", r#"{"protocol": {"kind": "file", "path": "nope.json"}}"#);
    assert_eq!(code(&hyperqst(d, &["simulate", "--config", "missing.json"])), 1);
    write(d, "typo.json", r#"{"sede": 3}"#);
    assert_eq!(code(&hyperqst(d, &["simulate", "--config", "typo.json"])), 1);
    write(d, "version.json", r#"{"schema_version": 9}"#);
    assert_eq!(code(&hyperqst(d, &["simulate", "--config", "version.json"])), 1);
    write(d, "noise.json", r#"{"noise": {"kind": "depolarizing", "p": 1.5}}"#);
    assert_eq!(code(&hyperqst(d, &["simulate", "--config", "noise.json"])), 1);
    assert_eq!(code(&hyperqst(d, &["reconstruct", "absent.csv"])), 1);
    assert_eq!(code(&hyperqst(d, &["no-such-command"])), 1);
}

#[test]
fn simulate_writes_reproducible_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&hyperqst(d, &["simulate", "--seed", "5", "--out", "a.csv", "--quiet"])), 0);
    assert_eq!(code(&hyperqst(d, &["simulate", "--seed", "5", "--out", "b.csv", "--quiet"])), 0);
    assert_eq!(code(&hyperqst(d, &["simulate", "--seed", "6", "--out", "c.csv", "--quiet"])), 0);
    let a = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b.csv")).unwrap());
    assert_ne!(a, std::fs::read_to_string(d.join("c.csv")).unwrap());
    let rows: Vec<&str> = a.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "label,counts,duration");
    assert_eq!(rows.len(), 129);

    write(d, "dark.json", r#"{"flux": {"pair_rate": 0.0, "integration_time": 60.0, "accidental_rate": 0.0}}"#);
    assert_eq!(code(&hyperqst(d, &["simulate", "--config", "dark.json", "--out", "dark.csv", "--quiet"])), 0);
    let dark = std::fs::read_to_string(d.join("dark.csv")).unwrap();
    assert!(dark.lines().filter(|l| !l.starts_with('#')).skip(1).all(|l| l.split(',').nth(1) == Some("0")));
}

#[test]
fn reconstruction_reports_are_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "ideal.json",
        r#"{"seed": 4, "flux": {"pair_rate": 1333.3333333333333, "integration_time": 60.0, "accidental_rate": 0.0},
            "chain": {"burn_in": 3000, "thinning": 40}}"#,
    );
    assert_eq!(code(&hyperqst(d, &["simulate", "--config", "ideal.json", "--out", "ideal.csv", "--quiet"])), 0);
    for name in ["r1.json", "r2.json"] {
        let out = hyperqst(d, &["reconstruct", "ideal.csv", "--config", "ideal.json", "--samples", "256", "--out", name]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("F_PF = "));
    }
    let mut r1 = read_json(&d.join("r1.json"));
    let mut r2 = read_json(&d.join("r2.json"));
    assert!(r1["metadata"]["wall_time_s"].as_f64().unwrap() > 0.0);
    r1["metadata"].as_object_mut().unwrap().remove("wall_time_s");
    r2["metadata"].as_object_mut().unwrap().remove("wall_time_s");
    assert_eq!(r1, r2);

    let f_pf = r1["fidelity"]["pf"]["estimate"]["mean"].as_f64().unwrap();
    assert!(f_pf >= 0.99, "ideal-data fidelity {f_pf}");
    let pf = &r1["matrices"]["pf"];
    assert_eq!(pf["basis"].as_array().unwrap().len(), 16);
    assert_eq!(pf["basis"][1], "H H I0 S1");
    assert_eq!(pf["re"].as_array().unwrap().len(), 256);
    assert_eq!(r1["matrices"]["p"]["basis"][3], "V V");
    assert_eq!(r1["metadata"]["n_samples"], 256);
    assert_eq!(r1["baseline"]["rank"], 112);
    for table in ["r1.rho_pf.csv", "r1.rho_p.csv", "r1.rho_f.csv", "r1.trace.csv"] {
        assert!(d.join(table).is_file(), "{table}");
    }
    let bars = std::fs::read_to_string(d.join("r1.rho_p.csv")).unwrap();
    assert_eq!(bars.lines().next(), Some("row,col,real,imag"));
    assert_eq!(bars.lines().count(), 17);

    let out = hyperqst(d, &["metrics", "r1.json", "--quiet"]);
    assert_eq!(code(&out), 0);
    let metrics: Value = serde_json::from_slice(&out.stdout).unwrap();
    let reported = metrics["metrics"]["fidelity_pf"].as_f64().unwrap();
    let bayes_mean_fid = r1["fidelity"]["pf"]["estimate"]["mean"].as_f64().unwrap();
    assert!((reported - bayes_mean_fid).abs() <= 1e-9);
}

#[test]
fn mismatched_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "q3.json", &format!(r#"{{{QUTRIT_STATE}, "protocol": {{"kind": "qutrit720"}}, "seed": 1}}"#));
    assert_eq!(code(&hyperqst(d, &["simulate", "--config", "q3.json", "--out", "q3.csv", "--quiet"])), 0);
    let out = hyperqst(d, &["reconstruct", "q3.csv", "--quiet"]);
    assert_eq!(code(&out), 1);
    // same d, different frame seed
    let out = hyperqst(d, &["reconstruct", "q3.csv", "--config", "q3.json", "--seed", "2", "--quiet"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("qutrit720-seed1"));
}

#[test]
fn replication_lists_every_row_and_flags_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "strict.json", r#"{"chain": {"burn_in": 100, "thinning": 2}, "replicate": {"tolerance": 1e-9}}"#);
    let out = hyperqst(d, &["replicate-paper", "--config", "strict.json", "--samples", "20", "--out", "rep.json"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("qubit channel 1") && stderr.contains("qutrit"));
    let rep = read_json(&d.join("rep.json"));
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    let truths: Vec<f64> = rows.iter().map(|r| r["ground_truth_fidelity"].as_f64().unwrap()).collect();
    assert_eq!(truths, vec![0.944, 0.933, 0.933, 0.937, 0.913, 0.908]);
    assert_eq!(rows[5]["reported"]["fidelity_pf"], "90.8(7)%");
    assert!(d.join("rep.csv").is_file());
    assert!(String::from_utf8_lossy(&out.stdout).contains("published"));
}

#[test]
fn metrics_of_configured_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "q3.json", &format!(r#"{{{QUTRIT_STATE}, "protocol": {{"kind": "qutrit720"}}}}"#));
    let out = hyperqst(d, &["metrics", "--config", "q3.json", "--out", "m.json"]);
    assert_eq!(code(&out), 0);
    let m = read_json(&d.join("m.json"));
    let en = m["metrics"]["frequency"]["log_negativity"].as_f64().unwrap();
    assert!((en - 3f64.log2()).abs() <= 1e-9);
    assert!((m["metrics"]["fidelity_pf"].as_f64().unwrap() - 1.0).abs() <= 1e-12);
}
