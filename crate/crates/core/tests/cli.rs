use std::path::Path;
use std::process::{Command, Output};

use bcpp::shell::RunManifest;

fn bcpp(args: &[&str], out: &Path, seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bcpp"));
    cmd.args(args)
        .arg("--output")
        .arg(out)
        .env_remove("BCPP_SEED");
    if let Some(s) = seed {
        cmd.env("BCPP_SEED", s);
    }
    cmd.output().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(i).unwrap().to_string())
        .collect()
}

#[test]
fn gamma_linear_solve_writes_k_and_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcpp(&["gamma", "--d", "3", "--R", "30"], dir.path(), None);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("gamma.csv")).unwrap();
    let k: f64 = column(&csv, "k_e1")[0].parse().unwrap();
    let g: f64 = column(&csv, "gamma")[0].parse().unwrap();
    assert!((k - 0.334432).abs() < 1e-6);
    assert_eq!(k + g, 1.0);
    assert!(dir.path().join("gamma.manifest.json").exists());
}

#[test]
fn positivity_small_cycle_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcpp(
        &["positivity", "--d", "1", "--L", "4", "--t", "1"],
        dir.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("positivity.csv")).unwrap();
    let min: f64 = column(&csv, "min_entry")[0].parse().unwrap();
    assert!(min >= -1e-9);
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcpp(&["frobnicate"], dir.path(), None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("usage: bcpp"));
    assert!(err
        .lines()
        .any(|l| l.starts_with('{') && l.contains("\"kind\":\"config\"")));
}

#[test]
fn config_file_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[model]\nd = 3\nlambda = fast\n").unwrap();
    let o = bcpp(
        &["kernel", "--config", cfg.to_str().unwrap()],
        dir.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    let o = bcpp(&["kernel", "--L", "2"], dir.path(), None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_tolerance_exits_two() {
    // R = 4 truncation is visibly leaky by t = 2
    let dir = tempfile::tempdir().unwrap();
    let o = bcpp(&["bound-check", "--R", "4", "--t", "2"], dir.path(), None);
    assert_eq!(o.status.code(), Some(2));
    let m = RunManifest::read(&dir.path().join("bound-check.manifest.json")).unwrap();
    assert!(m
        .checks
        .iter()
        .any(|c| c.name == "radius_doubling" && !c.passed));
}

#[test]
fn seed_env_overrides_master_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gamma",
        "--d",
        "2",
        "--method",
        "monte_carlo",
        "--walks",
        "500",
        "--horizon",
        "100",
        "--master_seed",
        "3",
    ];
    let o = bcpp(&args, dir.path(), Some("42"));
    assert_eq!(o.status.code(), Some(0));
    let m = RunManifest::read(&dir.path().join("gamma.manifest.json")).unwrap();
    assert_eq!(m.master_seed, 42);
    let first = std::fs::read(dir.path().join("gamma.csv")).unwrap();
    let o = bcpp(&args, dir.path(), Some("42"));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("gamma.csv")).unwrap(), first);
    let o = bcpp(&args, dir.path(), None);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(dir.path().join("gamma.csv")).unwrap(), first);
}
