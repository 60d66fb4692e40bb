use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tilens_core::field::{write_tigrid, GridSpec};

fn tilens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilens")).args(args).output().expect("spawn tilens")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn model() -> String {
    configs().join("ti_homogeneous.toml").display().to_string()
}

fn forward(dir: &Path) -> Output {
    tilens(&["forward", "--model", &model(), "--n-rays", "3", "--seed", "5", "--output-dir", dir.to_str().unwrap()])
}

#[test]
fn forward_writes_lens_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = forward(dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("lens.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "header plus one line per ray:\n{csv}");
    let manifest = fs::read_to_string(dir.path().join("lens.manifest.json")).unwrap();
    assert!(manifest.contains("sha256"));
    // stdout lists digest and path for each output
    assert!(String::from_utf8_lossy(&out.stdout).contains("lens.csv"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(forward(a.path()).status.success());
    assert!(forward(b.path()).status.success());
    for f in ["lens.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_model_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tilens(&["forward", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unreadable_config_is_a_validation_error() {
    let out = tilens(&["run", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_field_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GridSpec::cube(5, 0.5);
    let field = dir.path().join("zero.tigrid");
    write_tigrid(&field, &spec, &vec![0.0; spec.len()]).unwrap();
    let out = tilens(&["poincare", "--field", field.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn printed_config_runs_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let printed = tilens(&[
        "forward",
        "--model",
        &model(),
        "--n-rays",
        "2",
        "--seed",
        "9",
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--print-config",
    ]);
    assert!(printed.status.success());
    assert!(!out_dir.exists(), "--print-config must not run anything");
    let text = String::from_utf8(printed.stdout).unwrap();
    assert!(text.contains("seed = 9"), "{text}");

    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, &text).unwrap();
    let echoed = tilens(&["run", "--config", cfg.to_str().unwrap(), "--print-config"]);
    assert_eq!(String::from_utf8(echoed.stdout).unwrap(), text);

    let run = tilens(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out_dir.join("lens.csv").exists());
}

#[test]
fn oversized_seed_is_rejected() {
    let out = tilens(&["forward", "--model", &model(), "--seed", "18446744073709551615", "--print-config"]);
    assert_eq!(out.status.code(), Some(2));
}
