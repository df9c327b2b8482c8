use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn faultarb(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faultarb"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FAULTARB_LLM_API_KEY")
        .output()
        .expect("run faultarb")
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn default_dataset_evaluates_every_test_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_ok(&faultarb(out, &["--per-class", "300", "synth"]));
    assert_eq!(data_rows(&out.join("dataset/manifest.csv")), 2100);
    let o = faultarb(out, &["--per-class", "300", "evaluate"]);
    assert_ok(&o);
    let table = String::from_utf8_lossy(&o.stdout);
    for system in ["Baseline-NB", "HCAA-Uncalibrated", "HCAA-Calibrated"] {
        assert!(table.contains(system), "{table}");
    }
    assert_eq!(data_rows(&out.join("evaluation/case_records.csv")), 210);
    assert_eq!(data_rows(&out.join("features.csv")), 2100);
    assert!(out.join("calibration.json").is_file());

    assert_ok(&faultarb(out, &["--per-class", "300", "report"]));
    let md = fs::read_to_string(out.join("report/report.md")).unwrap();
    assert!(md.contains("| Method | Accuracy (%) | ECE | NLL | AURC | AUACC |"));
    assert!(out.join("report/reliability.svg").is_file());
    assert!(out.join("report/thresholds.csv").is_file());
}

#[test]
fn stage_outputs_are_byte_identical_across_runs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        assert_ok(&faultarb(d.path(), &["--per-class", "12", "--seed", "4", "synth"]));
        assert_ok(&faultarb(d.path(), &["--per-class", "12", "--seed", "4", "evaluate"]));
    }
    for file in [
        "dataset/manifest.csv",
        "features.csv",
        "diagnoses.csv",
        "arbitration.csv",
        "calibration.json",
        "evaluation/case_records.csv",
        "evaluation/comparison.json",
    ] {
        let a = fs::read(dirs[0].path().join(file)).unwrap();
        let b = fs::read(dirs[1].path().join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
}

#[test]
fn missing_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = faultarb(dir.path(), &["extract"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[missing-input]"));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[dataset]\nper_class = \"many\"\n").unwrap();
    let o = faultarb(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(&cfg, "[arbitration]\ntheta = 1.5\n").unwrap();
    let o = faultarb(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_model_endpoint_exits_with_arbiter_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("llm.toml");
    fs::write(
        &cfg,
        "[arbitration]\nbackend = \"llm\"\nk_samples = 1\n[arbitration.llm]\nbase_url = \"http://127.0.0.1:9/v1\"\nmax_retries = 0\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert_ok(&faultarb(dir.path(), &["--config", c, "--per-class", "10", "synth"]));
    let o = faultarb(dir.path(), &["--config", c, "--per-class", "10", "arbitrate"]);
    assert_eq!(o.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    // the failures are still on disk for review
    assert!(data_rows(&dir.path().join("arbitration.csv")) > 0);
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = faultarb(dir.path(), &["--seed", "9", "config"]);
    assert_ok(&o);
    let path = dir.path().join("printed.toml");
    fs::write(&path, &o.stdout).unwrap();
    let o = faultarb(dir.path(), &["--config", path.to_str().unwrap(), "config"]);
    assert_ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed = 9"));
}
