use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn wdiff(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdiff"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("WDIFF_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&o.stderr)))
}

const FIELD_A1: &str = r#"{"kind":"isotropic_power","alpha":1,"dim":3}"#;

#[test]
fn power_weight_passes_a2() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "check-weight",
            "--weight",
            r#"{"kind":"power","alpha":1,"dim":3}"#,
            "--condition",
            "a2",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json_file(&dir.path().join("report.json"));
    assert_eq!(report["pass"], true);
    let manifest = json_file(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "check-weight");
    assert_eq!(manifest["spec_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["versions"]["wdiff"], "0.1.0");
}

#[test]
fn weight_outside_the_class_fails_a2() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "check-weight",
            "--weight",
            r#"{"kind":"power","alpha":3.5,"dim":3}"#,
            "--condition",
            "a2",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_file(&dir.path().join("manifest.json"))["pass"], false);
}

#[test]
fn malformed_field_file_points_at_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("field.json");
    fs::write(&field, r#"{"kind":"isotropic_power","alpha":"one","dim":3}"#).unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "simulate",
            "--field",
            field.to_str().unwrap(),
            "--x0",
            "1,0,0",
            "--t",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "input");
    assert_eq!(e["pointer"], "/alpha");

    fs::write(&field, r#"{"kind":"isotropic_power","alpha":1,"dim":3,"lamda":2}"#).unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "simulate",
            "--field",
            field.to_str().unwrap(),
            "--x0",
            "1,0,0",
            "--t",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["pointer"], "/lamda");

    fs::write(
        &field,
        r#"{"kind":"weight_times_const_spd","matrix":[[1,0],[0,1]],"weight":{"kind":"power","alpha":"x","dim":2}}"#,
    )
    .unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "simulate",
            "--field",
            field.to_str().unwrap(),
            "--x0",
            "1,0",
            "--t",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    // Tagged weights are deserialized as a whole, so the pointer stops at the weight object.
    assert!(stderr_json(&o)["pointer"].as_str().unwrap().starts_with("/weight"));
}

#[test]
fn bad_arguments_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdiff(
        dir.path(),
        &["simulate", "--field", FIELD_A1, "--x0", "1,zero,0", "--t", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["pointer"], "/1");
    let o = wdiff(
        dir.path(),
        &["simulate", "--field", FIELD_A1, "--x0", "1,0", "--t", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = wdiff(
        dir.path(),
        &[
            "simulate", "--field", FIELD_A1, "--x0", "1,0,0", "--t", "1", "--dt", "2",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = wdiff(
        dir.path(),
        &[
            "oracle",
            "besq-mean",
            "--d",
            "3",
            "--alpha",
            "-4",
            "--x0",
            "1,0,0",
            "--t",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = wdiff(dir.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wdiff(
        dir.path(),
        &[
            "check-weight",
            "--weight",
            dir.path().join("missing.json").to_str().unwrap(),
            "--condition",
            "a2",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_besq_mean() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "oracle",
            "besq-mean",
            "--d",
            "3",
            "--alpha",
            "1",
            "--x0",
            "1,0,0",
            "--t",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mean_sq_norm"], 5.0);
    assert_eq!(v["delta"], 4.0);
    let o = wdiff(dir.path(), &["oracle", "dimension", "--d", "2", "--alpha", "-1"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["hits_origin"], true);
}

#[test]
fn verify_moments_matches_the_bessel_mean() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "verify-moments",
            "--alpha",
            "1",
            "--d",
            "3",
            "--n",
            "20000",
            "--t",
            "1",
            "--dt",
            "1e-2",
            "--seed",
            "3",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(dir.path().join("moments.csv")).unwrap();
    assert!(csv.starts_with("run_id,t,statistic,value,se\n"));
    assert!(csv.contains(",1.0,oracle_mean_sq_norm,5.0,0.0"));
}

#[test]
fn reruns_reproduce_reports_for_any_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "simulate", "--field", FIELD_A1, "--x0", "1,0,0", "--n", "2000", "--t", "1", "--dt", "1e-2", "--seed", "9",
    ];
    let mut one = vec!["--threads", "1"];
    one.extend(args);
    let mut four = vec!["--threads", "4"];
    four.extend(args);
    assert_eq!(wdiff(a.path(), &one).status.code(), Some(0));
    assert_eq!(wdiff(b.path(), &four).status.code(), Some(0));
    for name in ["summary.json", "batch.json", "moments.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let (ma, mb) = (
        json_file(&a.path().join("manifest.json")),
        json_file(&b.path().join("manifest.json")),
    );
    assert_eq!(ma["spec_hash"], mb["spec_hash"]);
}

#[test]
fn simulate_then_verify_heatkernel() {
    let dir = tempfile::tempdir().unwrap();
    let field = r#"{"kind":"isotropic_power","alpha":0,"dim":3}"#;
    let o = wdiff(
        dir.path(),
        &[
            "simulate",
            "--field",
            field,
            "--x0",
            "0,0,0",
            "--n",
            "20000",
            "--t",
            "2",
            "--dt",
            "0.25",
            "--snapshots",
            "0.25,0.5,1",
            "--seed",
            "5",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"radii":[0.5,1.0,1.5]}"#).unwrap();
    let report_dir = dir.path().join("hk");
    let o = wdiff(
        &report_dir,
        &[
            "verify-heatkernel",
            "--batch",
            dir.path().join("batch.json").to_str().unwrap(),
            "--grid",
            grid.to_str().unwrap(),
            "--eps",
            "1.0",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json_file(&report_dir.join("report.json"));
    assert_eq!(r["sweep"]["times"].as_array().unwrap().len(), 4);
    assert_eq!(r["n"], 20000);
    assert!(r["sweep"]["spread"].as_f64().unwrap() < 10.0);

    fs::write(&grid, r#"{"radii":[1.0],"times":[0.3]}"#).unwrap();
    let o = wdiff(
        &report_dir,
        &[
            "verify-heatkernel",
            "--batch",
            dir.path().join("batch.json").to_str().unwrap(),
            "--grid",
            grid.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["pointer"], "/times/0");
}

#[test]
fn local_norm_failure_of_the_drift() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "check-conditions",
            "--field",
            FIELD_A1,
            "--condition",
            "hp6",
            "--p",
            "8",
            "--region",
            "ball",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let r = json_file(&dir.path().join("report.json"));
    assert_eq!(r["norms"][0]["report"]["converged"], false);
    let o = wdiff(
        dir.path(),
        &[
            "check-conditions",
            "--field",
            FIELD_A1,
            "--condition",
            "hp6",
            "--p",
            "8",
            "--region",
            "annulus",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let o = wdiff(
        dir.path(),
        &["check-conditions", "--field", FIELD_A1, "--condition", "hp9"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn riesz_potential_of_the_unit_ball() {
    let dir = tempfile::tempdir().unwrap();
    let g = r#"{"kind":"ball_indicator","center":[0,0,0],"radius":1}"#;
    let o = wdiff(dir.path(), &["potentials", "--g", g, "--eta", "2", "--x", "0,0,0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-6);
    let o = wdiff(
        dir.path(),
        &["potentials", "--g", g, "--eta", "2", "--x", "0,0,0", "--p", "1.4"],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = wdiff(dir.path(), &["potentials", "--g", g, "--eta", "3", "--x", "0,0,0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reflected_case_hitting_agrees_with_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdiff(
        dir.path(),
        &[
            "hitting", "--alpha", "-1", "--d", "2", "--n", "2000", "--t", "5", "--dt", "1e-3", "--seed", "2",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = json_file(&dir.path().join("report.json"));
    assert_eq!(r["origin_hit"], true);
    assert!(r["reference"]["exact"].as_f64().unwrap() > 0.6);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wdiff"))
        .args(["oracle", "dimension", "--d", "3", "--alpha", "1"])
        .env("WDIFF_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("report.json").exists());
}
