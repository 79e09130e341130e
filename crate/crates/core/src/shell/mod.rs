//! Command-line front end: configuration, dispatch, CSV output and run
//! manifests.
//!
//! Exit codes: 0 success, 1 configuration error, 2 a check ran and failed,
//! 3 internal error. Errors are also logged to stderr as one JSON line.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use chrono::Utc;

use crate::error::{Error, Result};
use commands::Outcome;
pub use config::{parse_config, parse_experiment_config, Settings};
pub use output::{
    config_hash, read_manifests, write_csv, CheckRecord, ColumnKind, Field, RunManifest, Schema,
};

pub const SUBCOMMANDS: &[&str] = &[
    "simulate",
    "kernel",
    "gamma",
    "moments",
    "bound-check",
    "positivity",
    "pde",
    "hydro",
    "variance",
    "martingale",
    "report",
];

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub fn usage() -> String {
    let mut u = String::from(
        "usage: bcpp <subcommand> [--config FILE] [--key value ...]\n\nsubcommands:\n",
    );
    for s in SUBCOMMANDS {
        u.push_str(&format!("  {s}\n"));
    }
    u.push_str("\nkeys (config file section in brackets):\n");
    for k in config::KEYS {
        let default = if k.default.is_empty() {
            String::new()
        } else {
            format!(" (default {})", k.default)
        };
        u.push_str(&format!(
            "  --{:<14} [{}] {}{default}\n",
            k.name, k.section, k.help
        ));
    }
    u.push_str("\nBCPP_SEED overrides master_seed.\n");
    u
}

/// Parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub subcommand: String,
    pub settings: Settings,
}

/// Builds settings from the config file, then `--key value` flags, then `seed_env`.
pub fn parse_args(args: &[String], seed_env: Option<&str>) -> Result<Invocation> {
    let sub = args
        .first()
        .ok_or_else(|| Error::config("missing subcommand"))?
        .clone();
    if !SUBCOMMANDS.contains(&sub.as_str()) {
        return Err(Error::config(format!("unknown subcommand `{sub}`")));
    }
    let mut pairs = Vec::new();
    let mut config_path = None;
    let mut it = args[1..].iter();
    while let Some(a) = it.next() {
        let flag = a
            .strip_prefix("--")
            .ok_or_else(|| Error::config(format!("unexpected argument `{a}`")))?;
        let (k, v) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::config(format!("flag `--{flag}` needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        if k == "config" {
            config_path = Some(PathBuf::from(v));
        } else {
            pairs.push((k, v));
        }
    }
    let mut settings = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            parse_config(&text).map_err(|e| e.context(p.display().to_string()))?
        }
        None => Settings::defaults(),
    };
    for (k, v) in pairs {
        settings.set_cli(&k, &v)?;
    }
    if let Some(seed) = seed_env {
        settings.set_seed_from_env(seed)?;
    }
    Ok(Invocation {
        subcommand: sub,
        settings,
    })
}

fn run_subcommand(sub: &str, s: &Settings, dir: &Path) -> Result<Outcome> {
    match sub {
        "simulate" => commands::simulate(s, dir),
        "kernel" => commands::kernel(s, dir),
        "gamma" => commands::gamma(s, dir),
        "moments" => commands::moments(s, dir),
        "bound-check" => commands::bound(s, dir),
        "positivity" => commands::positivity(s, dir),
        "pde" => commands::pde(s, dir),
        "hydro" => commands::hydro_cmd(s, dir),
        "variance" => commands::variance_cmd(s, dir),
        "martingale" => commands::martingale_cmd(s, dir),
        "report" => report(dir),
        other => Err(Error::config(format!("unknown subcommand `{other}`"))),
    }
}

/// Runs one invocation and writes its manifest; returns the manifest.
pub fn execute(inv: &Invocation) -> Result<RunManifest> {
    let s = &inv.settings;
    let dir = PathBuf::from(s.text("output")?);
    let workers = s.usize("workers")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::internal(format!("thread pool: {e}")))?;
    let started = Utc::now().to_rfc3339();
    let outcome = pool.install(|| run_subcommand(&inv.subcommand, s, &dir))?;
    let manifest = RunManifest {
        config_hash: config_hash(&s.canonical_text()),
        subcommand: inv.subcommand.clone(),
        master_seed: s.u64("master_seed")?,
        started,
        finished: Utc::now().to_rfc3339(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: outcome.outputs,
        checks: outcome.checks,
    };
    if inv.subcommand != "report" {
        manifest.write(&dir)?;
    }
    Ok(manifest)
}

/// Rebuilds the check summary from every manifest in `dir`.
pub fn report(dir: &Path) -> Result<Outcome> {
    let manifests = read_manifests(dir)?;
    if manifests.is_empty() {
        return Err(Error::config(format!("no manifests in {}", dir.display())));
    }
    let mut rows = Vec::new();
    let mut outcome = Outcome::default();
    for m in &manifests {
        for c in &m.checks {
            println!(
                "{} {} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                m.subcommand,
                c.name,
                c.detail
            );
            rows.push(vec![
                Field::Text(m.subcommand.clone()),
                Field::Text(c.name.clone()),
                Field::Int(c.passed as i64),
                Field::Text(c.detail.clone()),
                Field::Text(m.config_hash.clone()),
            ]);
            outcome.checks.push(c.clone());
        }
    }
    let schema = Schema::new(&[
        ("subcommand", ColumnKind::Text),
        ("check", ColumnKind::Text),
        ("passed", ColumnKind::Int),
        ("detail", ColumnKind::Text),
        ("config_hash", ColumnKind::Text),
    ]);
    let path = dir.join("report.csv");
    write_csv(&rows, &schema, &path)?;
    outcome.outputs.push(path);
    Ok(outcome)
}

fn log_error(sub: &str, e: &Error) {
    let kind = match e.root() {
        Error::Config(_) | Error::ConfigLine { .. } => "config",
        Error::Domain(_) => "domain",
        Error::Numeric(_) => "numeric",
        Error::Io { .. } => "io",
        _ => "internal",
    };
    let line = serde_json::json!({
        "level": "error",
        "subcommand": sub,
        "kind": kind,
        "exit_code": e.exit_code(),
        "message": e.to_string(),
    });
    eprintln!("{line}");
}

/// Entry point behind the binary; `args` excludes the program name.
pub fn dispatch(args: &[String], seed_env: Option<&str>) -> i32 {
    if args.is_empty() || args[0] == "--help" || args[0] == "help" {
        eprint!("{}", usage());
        return if args.is_empty() {
            EXIT_CONFIG
        } else {
            EXIT_OK
        };
    }
    let inv = match parse_args(args, seed_env) {
        Ok(inv) => inv,
        Err(e) => {
            log_error(&args[0], &e);
            if !SUBCOMMANDS.contains(&args[0].as_str()) {
                eprint!("{}", usage());
            }
            return e.exit_code();
        }
    };
    match execute(&inv) {
        Ok(m) => {
            for c in m.checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "{}",
                    serde_json::json!({"level": "warn", "subcommand": inv.subcommand, "check": c.name, "detail": c.detail})
                );
            }
            if m.checks.iter().all(|c| c.passed) {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            log_error(&inv.subcommand, &e);
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unknown_subcommand_is_a_config_error() {
        assert_eq!(dispatch(&args(&["frobnicate"]), None), EXIT_CONFIG);
        assert_eq!(dispatch(&[], None), EXIT_CONFIG);
    }

    #[test]
    fn flags_env_and_config_file_layer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.cfg");
        std::fs::write(&cfg, "[model]\nd = 2\n[experiment]\nmaster_seed = 5\n").unwrap();
        let inv = parse_args(
            &args(&[
                "kernel",
                "--config",
                cfg.to_str().unwrap(),
                "--lambda",
                "1.25",
                "--L=6",
            ]),
            Some("11"),
        )
        .unwrap();
        assert_eq!(inv.settings.usize("d").unwrap(), 2);
        assert_eq!(inv.settings.usize("L").unwrap(), 6);
        assert_eq!(inv.settings.f64("lambda").unwrap(), 1.25);
        assert_eq!(inv.settings.u64("master_seed").unwrap(), 11);
        assert!(parse_args(&args(&["kernel", "--nope", "1"]), None).is_err());
        assert!(parse_args(&args(&["kernel", "--d"]), None).is_err());
        assert!(parse_args(&args(&["kernel", "stray"]), None).is_err());
    }

    #[test]
    fn positivity_run_writes_csv_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let code = dispatch(
            &args(&[
                "positivity",
                "--d",
                "1",
                "--L",
                "4",
                "--t",
                "1",
                "--output",
                out,
            ]),
            None,
        );
        assert_eq!(code, EXIT_OK);
        let text = std::fs::read_to_string(dir.path().join("positivity.csv")).unwrap();
        let min: f64 = text
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(4)
            .unwrap()
            .parse()
            .unwrap();
        assert!(min >= -1e-9);
        let ms = read_manifests(dir.path()).unwrap();
        assert_eq!(ms.len(), 1);
        assert!(ms[0].checks.iter().all(|c| c.passed));
        assert_eq!(dispatch(&args(&["report", "--output", out]), None), EXIT_OK);
        assert!(dir.path().join("report.csv").exists());
    }

    #[test]
    fn config_errors_map_to_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(
            dispatch(&args(&["kernel", "--lambda", "-1", "--output", out]), None),
            EXIT_CONFIG
        );
        assert_eq!(
            dispatch(&args(&["report", "--output", out]), None),
            EXIT_CONFIG
        );
    }
}
