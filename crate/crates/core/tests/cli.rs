use std::fs;
use std::path::Path;
use std::process::Command;

fn dtr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dtr")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = dtr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn report_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let small = ["--set", "analysis.reps=10", "--set", "analysis.points=5", "--set", "analysis.group_size=20"];
    for dir in [&a, &b] {
        let mut args = vec!["report", "--out", dir.to_str().unwrap()];
        args.extend(small);
        run_ok(&args);
    }
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap().to_string();
    for (name, bytes) in &fa {
        if name.ends_with(".csv") {
            let first = String::from_utf8_lossy(bytes).lines().next().unwrap().to_string();
            assert!(first.starts_with(&format!("# config_hash={hash} seed=")), "{name}: {first}");
        } else if name.ends_with(".svg") || name.ends_with(".json") {
            assert!(String::from_utf8_lossy(bytes).contains(&hash), "{name} lacks the config hash");
        }
    }
}

#[test]
fn solve_writes_a_seven_by_three_action_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    run_ok(&["simulate", "--out", out]);
    run_ok(&["fit", "--out", out]);
    run_ok(&["solve", "--out", out, "--patient", "1"]);
    let text = fs::read_to_string(tmp.path().join("action_matrices.csv")).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    assert_eq!(reader.headers().unwrap(), vec!["patient_id", "t", "stage_1", "stage_2", "stage_3"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(&row[1], (k + 1).to_string());
        assert!(row.iter().skip(2).all(|a| a == "1" || a == "2"));
    }
}

#[test]
fn compare_writes_two_tables_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let pair = ["--set", "analysis.income_pairs=[[10000,80000]]", "--set", "analysis.group_size=20"];
    for cmd in ["simulate", "fit", "compare"] {
        let mut args = vec![cmd, "--out", out];
        args.extend(pair);
        run_ok(&args);
    }
    let text = fs::read_to_string(tmp.path().join("comparison.csv")).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7 * 3);
    for stage in 1..=3 {
        assert!(tmp.path().join(format!("comparison_10000_80000_stage{stage}.svg")).exists());
    }
}

#[test]
fn missing_upstream_artifact_names_the_prerequisite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let fit = dtr(&["fit", "--out", out]);
    assert!(!fit.status.success());
    assert!(String::from_utf8_lossy(&fit.stderr).contains("run `dtr simulate` first"));
    run_ok(&["simulate", "--out", out]);
    let solve = dtr(&["solve", "--out", out]);
    assert!(!solve.status.success());
    assert!(String::from_utf8_lossy(&solve.stderr).contains("run `dtr fit` first"));
}

#[test]
fn invalid_configuration_fails_with_the_field_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let bad = dtr(&["simulate", "--out", out, "--set", "covariates.age.sd=-1"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("covariates.age"));
    let cfg = tmp.path().join("broken.json");
    fs::write(&cfg, r#"{"seed": 1}"#).unwrap();
    let bad = dtr(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("config error"));
}

#[test]
fn seed_flag_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&["simulate", "--out", a.to_str().unwrap(), "--seed", "1"]);
    run_ok(&["simulate", "--out", b.to_str().unwrap(), "--seed", "2"]);
    assert_ne!(fs::read(a.join("cohort.csv")).unwrap(), fs::read(b.join("cohort.csv")).unwrap());
}

#[test]
fn adaptive_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let approach = r#"approach={"kind":"adaptive","grid_covariates":["age","blood_pressure"],"smoothing":true}"#;
    let small = ["--set", approach, "--set", "analysis.reps=10", "--set", "analysis.points=3", "--set", "analysis.group_size=10"];
    let mut args = vec!["report", "--out", out];
    args.extend(small);
    run_ok(&args);
    let model: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("models/adaptive.json")).unwrap()).unwrap();
    assert_eq!(model["model"]["counts"]["space"]["num_cells"], 9);
    assert!(tmp.path().join("sensitivity.csv").exists());
}

#[test]
fn per_epoch_models_are_fitted_when_requested() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let opts = ["--set", "fit.time_homogeneous=false", "--set", "simulation.training_patients=5000"];
    for cmd in ["simulate", "fit"] {
        let mut args = vec![cmd, "--out", out];
        args.extend(opts);
        run_ok(&args);
    }
    assert!(tmp.path().join("models/t7_s3_a2.json").exists());
    let mut args = vec!["solve", "--out", out, "--patient", "3"];
    args.extend(opts);
    run_ok(&args);
}
