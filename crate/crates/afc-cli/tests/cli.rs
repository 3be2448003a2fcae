//! CLI contract: exit codes, output files, determinism across seeds and
//! worker counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn afc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.path().is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(entry.path()).unwrap(),
            );
        }
    }
    out
}

#[test]
fn efficiency_prints_the_expected_value() {
    let out = afc(&["comb", "efficiency", "--d", "4.12", "--finesse", "4", "--d0", "0.45"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.1559");
}

#[test]
fn domain_errors_exit_one_with_module_error_name() {
    let out = afc(&["comb", "efficiency", "--d", "-1", "--finesse", "4", "--d0", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[domain-error]"));

    let out = afc(&[
        "comb", "plan", "--bandwidth", "0.5", "--min-tooth-fwhm", "0.1", "--mode-duration", "1",
        "--control-duration", "2", "--modes", "5", "--d", "4.12", "--d0", "0.45",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[capacity-infeasible]"));
}

#[test]
fn usage_errors_exit_two() {
    let out = afc(&["comb", "no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    let out = afc(&["comb", "efficiency", "--d", "4.12"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn defaults_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = afc(&["defaults", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let defaults = dir.path().join("defaults.json");
    assert!(defaults.exists());

    // a config produced by the CLI is accepted back unchanged
    let out = afc(&[
        "comb",
        "build",
        "--config",
        defaults.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(dir.path().join("comb_profile.csv").exists());
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    afc(&["defaults", "--out", dir.path().to_str().unwrap()]);
    let path = dir.path().join("defaults.json");
    let body = fs::read_to_string(&path).unwrap();
    fs::write(&path, body.replace("\"delta_mhz\": 0.5", "\"delta_mhz\": -1.0")).unwrap();
    let out = afc(&[
        "comb",
        "build",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("delta_mhz"), "stderr: {stderr}");
}

#[test]
fn fringe_fixture_fits_to_the_reference_visibility() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fringe.csv");
    let out = afc(&[
        "fit",
        "fringe",
        "--input",
        fixture.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().find(|l| l.starts_with("visibility")).unwrap();
    let v: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((v - 0.84).abs() < 0.02, "fitted V = {v}");
    assert!(dir.path().join("fit_fringe.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = afc(&[
            "experiment",
            "fig2a",
            "--seed",
            "7",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(dir_bytes(dir_a.path()), dir_bytes(dir_b.path()));
}
