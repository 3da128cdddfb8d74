//! End-to-end behaviour of the command-line front end: report layout, unit
//! annotations and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const COARSE: &str = "[discretization]\nh = 0.08333333333333333\n";

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_waveguide"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .env("WAVEGUIDE_THREADS", "1")
        .output()
        .unwrap()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect();
    files.sort();
    files
}

fn assert_units(file: &Path) {
    let text = fs::read_to_string(file).unwrap();
    let header = text.lines().next().unwrap();
    for column in header.split(',') {
        assert!(column.ends_with(']') && column.contains(" ["), "{}: column {column:?} lacks a unit", file.display());
    }
}

#[test]
fn band_diagram_has_one_row_per_point_and_band() {
    let dir = scratch("bands");
    let out = run(&dir, COARSE, &["bands", "--grid", "6", "--n-bands", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("out/bands.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 2 * 6 * 5);
    let manifest = fs::read_to_string(dir.join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("bands.csv"));
    for file in csv_files(&dir.join("out")) {
        assert_units(&file);
    }
}

#[test]
fn every_report_table_carries_units() {
    let dir = scratch("units");
    for command in ["mesh", "dirac", "coupling", "check-fold"] {
        let out = run(&dir, COARSE, &[command]);
        assert!(out.status.success(), "{command}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let files = csv_files(&dir.join("out"));
    assert!(files.len() >= 3);
    for file in files {
        assert_units(&file);
    }
}

#[test]
fn uniform_perturbation_is_rejected_as_uncoupled() {
    // A constant index change is orthogonal to the Dirac pair: t* = 0.
    let dir = scratch("uncoupled");
    let config = format!("{COARSE}[index.direction]\nkind = \"constant\"\nvalue = 1.0\n");
    let out = run(&dir, &config, &["coupling"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("does not couple the Dirac pair"), "{stderr}");
}

#[test]
fn malformed_configuration_exits_with_a_config_error() {
    let dir = scratch("malformed");
    for config in ["[discretization]\nh = -1.0\n", "[geometry]\nstrip_width = 1.0\n", "not toml at all ="] {
        let out = run(&dir, config, &["mesh"]);
        assert_eq!(out.status.code(), Some(2), "config {config:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
