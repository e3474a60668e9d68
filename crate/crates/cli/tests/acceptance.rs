//! End-to-end tests for the `pftrl` binary, including the determinism
//! acceptance criterion: re-running an experiment must reproduce every CSV
//! byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pftrl")
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pftrl-test-{}-{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn pftrl")
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("read output dir") {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            );
        }
    }
    out
}

#[test]
fn criterion_10_rerun_is_byte_identical() {
    let config = repo_config("paper_example.json");
    let dir_a = temp_dir("det-a");
    let dir_b = temp_dir("det-b");
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "run",
            config.to_str().unwrap(),
            "--horizon-override",
            "800",
            "--seed-override",
            "3",
            "--grid",
            "401",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "stdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = csv_bytes(&dir_a);
    let b = csv_bytes(&dir_b);
    assert_eq!(a.len(), 9, "expected 3 algorithms x 3 sweep values");
    assert_eq!(a, b, "fresh-directory reruns must match byte for byte");

    // Overwriting in place also reproduces identical bytes.
    let out = run(&[
        "run",
        config.to_str().unwrap(),
        "--horizon-override",
        "800",
        "--seed-override",
        "3",
        "--grid",
        "401",
        "--out",
        dir_a.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(csv_bytes(&dir_a), b);

    let report_a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir_a.join("paper-example_report.json")).unwrap())
            .unwrap();
    let report_b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir_b.join("paper-example_report.json")).unwrap())
            .unwrap();
    assert_eq!(report_a, report_b);
    assert_eq!(report_a["runs"].as_array().unwrap().len(), 9);

    let _ = fs::remove_dir_all(&dir_a);
    let _ = fs::remove_dir_all(&dir_b);
    println!("[PASS] criterion 10: reruns produced byte-identical CSVs and reports");
}

#[test]
fn dry_run_validates_without_writing() {
    let config = repo_config("smoke.json");
    let dir = temp_dir("dry");
    let out = run(&[
        "run",
        config.to_str().unwrap(),
        "--dry-run",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("dry run: 8 jobs"));
    assert!(stdout.contains("penalized_ftrl c=0.75 seed=1 t=1000"));
    assert!(!dir.exists(), "dry run must not create outputs");
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = temp_dir("badcfg");
    fs::create_dir_all(&dir).unwrap();

    // Unknown key.
    let bad = dir.join("unknown_key.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(repo_config("smoke.json")).unwrap()).unwrap();
    v["not_a_field"] = serde_json::json!(true);
    fs::write(&bad, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let out = run(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config error"), "stderr: {stderr}");
    assert!(stderr.contains("unknown_key.json:"), "stderr: {stderr}");

    // Semantic error with a named field.
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(repo_config("smoke.json")).unwrap()).unwrap();
    v["grid_points"] = serde_json::json!(2);
    let bad2 = dir.join("bad_grid.json");
    fs::write(&bad2, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let out = run(&["run", bad2.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid_points"));

    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn verify_emits_condition_report() {
    let config = repo_config("smoke.json");
    let dir = temp_dir("verify");
    let out = run(&[
        "verify",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--horizon-override",
        "2000",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cond2"));
    assert!(stdout.contains("cond3"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("smoke_verify.json")).unwrap()).unwrap();
    assert!(report["runs"].as_array().unwrap().is_empty());
    let conditions = report["conditions"].as_array().unwrap();
    assert_eq!(conditions.len(), 4, "2 sweep values x 2 seeds");
    for c in conditions {
        assert!(c["report"]["condition3"][0]["margin"].as_f64().unwrap() >= 0.0);
    }
    let _ = fs::remove_dir_all(&dir);
}
