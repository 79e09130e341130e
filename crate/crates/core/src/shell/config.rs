//! Flat `[section]` / `key = value` configuration with line-numbered errors.
//!
//! Every key lives in exactly one section and key names are unique across
//! sections, so a CLI flag `--key value` addresses a key without its section.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::hydro::{ExperimentConfig, DEFAULT_C_L};
use crate::pde::SpatialQuadrature;
use crate::process::{DensityProfile, TestFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Real,
    Text,
    IntList,
    RealList,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(u64),
    Real(f64),
    Text(String),
    IntList(Vec<u64>),
    RealList(Vec<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join<T: fmt::Display>(v: &[T], f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "[")?;
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{x}")?;
            }
            write!(f, "]")
        }
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:?}"),
            Value::Text(v) => write!(f, "{v}"),
            Value::IntList(v) => join(v, f),
            Value::RealList(v) => join(&v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>(), f),
        }
    }
}

pub struct KeySpec {
    pub name: &'static str,
    pub section: &'static str,
    pub kind: Kind,
    /// Default in config syntax; empty means "unset".
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(
    name: &'static str,
    section: &'static str,
    kind: Kind,
    default: &'static str,
    help: &'static str,
) -> KeySpec {
    KeySpec {
        name,
        section,
        kind,
        default,
        help,
    }
}

/// Every recognized key.
pub const KEYS: &[KeySpec] = &[
    key("d", "model", Kind::Int, "3", "lattice dimension"),
    key(
        "lambda",
        "model",
        Kind::Real,
        "0.6",
        "infection rate per directed edge",
    ),
    key("L", "lattice", Kind::Int, "8", "torus side"),
    key(
        "t",
        "lattice",
        Kind::Real,
        "1",
        "microscopic time (simulate, kernel)",
    ),
    key(
        "t_list",
        "lattice",
        Kind::RealList,
        "",
        "times; macroscopic for hydro runs",
    ),
    key(
        "profile",
        "profile",
        Kind::Text,
        "gaussian_bump",
        "gaussian_bump | constant_bump | smooth_box",
    ),
    key(
        "profile_center",
        "profile",
        Kind::RealList,
        "",
        "profile center (default origin)",
    ),
    key(
        "profile_width",
        "profile",
        Kind::Real,
        "0.15",
        "gaussian width",
    ),
    key(
        "profile_radius",
        "profile",
        Kind::Real,
        "0.5",
        "constant/smooth_box half-width",
    ),
    key(
        "profile_taper",
        "profile",
        Kind::Real,
        "0.25",
        "smooth_box shoulder width",
    ),
    key(
        "profile_height",
        "profile",
        Kind::Real,
        "1",
        "profile height",
    ),
    key(
        "test_fn",
        "test_function",
        Kind::Text,
        "cosine_bump",
        "cosine_bump | polynomial_bump",
    ),
    key(
        "test_center",
        "test_function",
        Kind::RealList,
        "",
        "test function center (default origin)",
    ),
    key(
        "test_radius",
        "test_function",
        Kind::Real,
        "0.5",
        "test function support radius",
    ),
    key(
        "test_height",
        "test_function",
        Kind::Real,
        "1",
        "test function height",
    ),
    key(
        "N",
        "experiment",
        Kind::Int,
        "4",
        "scale for simulate / moments initial data",
    ),
    key(
        "N_list",
        "experiment",
        Kind::IntList,
        "[4, 8]",
        "scales for hydro runs",
    ),
    key(
        "replicas",
        "experiment",
        Kind::Int,
        "200",
        "replicas per cell",
    ),
    key(
        "c_L",
        "experiment",
        Kind::Int,
        "8",
        "torus rule L = c_L * N",
    ),
    key(
        "master_seed",
        "experiment",
        Kind::Int,
        "1",
        "master seed (BCPP_SEED overrides)",
    ),
    key(
        "workers",
        "experiment",
        Kind::Int,
        "0",
        "worker threads, 0 = all cores",
    ),
    key(
        "output",
        "experiment",
        Kind::Text,
        "out",
        "output directory",
    ),
    key(
        "heat_order",
        "experiment",
        Kind::Int,
        "16",
        "heat solution quadrature order",
    ),
    key(
        "quad_order",
        "experiment",
        Kind::Int,
        "8",
        "Gauss-Legendre nodes per panel",
    ),
    key(
        "quad_panels",
        "experiment",
        Kind::Int,
        "8",
        "panels per axis over supp G",
    ),
    key(
        "R",
        "kernels",
        Kind::Int,
        "30",
        "ball radius / linear-solve radius",
    ),
    key(
        "R_companion",
        "kernels",
        Kind::Int,
        "0",
        "second radius for extrapolation, 0 = none",
    ),
    key(
        "R_wide",
        "kernels",
        Kind::Int,
        "0",
        "comparison radius for bound-check, 0 = 2R",
    ),
    key(
        "method",
        "kernels",
        Kind::Text,
        "linear_solve",
        "linear_solve | monte_carlo",
    ),
    key("walks", "kernels", Kind::Int, "100000", "Monte Carlo walks"),
    key(
        "horizon",
        "kernels",
        Kind::Int,
        "10000",
        "Monte Carlo walk length",
    ),
    key(
        "tol",
        "kernels",
        Kind::Real,
        "1e-10",
        "linear-solve relative residual",
    ),
    key(
        "gamma_R_lo",
        "kernels",
        Kind::Int,
        "30",
        "smaller radius of the canonical gamma solve",
    ),
    key(
        "gamma_R_hi",
        "kernels",
        Kind::Int,
        "40",
        "larger radius of the canonical gamma solve",
    ),
    key(
        "grid_step",
        "pde",
        Kind::Real,
        "0.05",
        "finite-difference grid step",
    ),
    key(
        "half_width",
        "pde",
        Kind::Real,
        "0",
        "finite-difference box half-width, 0 = smallest admissible",
    ),
    key(
        "time_steps",
        "pde",
        Kind::Int,
        "65",
        "Simpson points for the weak residual",
    ),
    key(
        "samples",
        "pde",
        Kind::Int,
        "21",
        "sample points along the first axis",
    ),
];

pub fn spec_of(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// Where a value came from, for error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Default,
    File(usize),
    Cli,
    Env,
}

impl Origin {
    fn line(self) -> Option<usize> {
        match self {
            Origin::File(l) => Some(l),
            _ => None,
        }
    }
}

/// Parsed key-value settings with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, (Value, Origin)>,
}

fn parse_value(spec: &KeySpec, raw: &str) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    let list_items = |raw: &str| -> Vec<String> {
        let inner = raw
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .unwrap_or(raw);
        inner
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    };
    let int = |s: &str| {
        s.parse::<u64>()
            .map_err(|_| format!("`{}` expects a nonnegative integer, got `{s}`", spec.name))
    };
    let real = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| format!("`{}` expects a number, got `{s}`", spec.name))
            .and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("`{}` must be finite", spec.name))
                }
            })
    };
    Ok(match spec.kind {
        Kind::Int => Value::Int(int(raw)?),
        Kind::Real => Value::Real(real(raw)?),
        Kind::Text => Value::Text(raw.trim_matches('"').to_string()),
        Kind::IntList => Value::IntList(
            list_items(raw)
                .iter()
                .map(|s| int(s))
                .collect::<std::result::Result<_, _>>()?,
        ),
        Kind::RealList => Value::RealList(
            list_items(raw)
                .iter()
                .map(|s| real(s))
                .collect::<std::result::Result<_, _>>()?,
        ),
    })
}

/// Parses configuration text; unknown keys and sections are rejected.
pub fn parse_config(text: &str) -> Result<Settings> {
    let mut s = Settings::defaults();
    let mut section: Option<String> = None;
    let mut seen: BTreeMap<&'static str, usize> = BTreeMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::ConfigLine { line, message };
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header `{content}`")))?
                .trim();
            if !KEYS.iter().any(|k| k.section == name) {
                return Err(err(format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let k = k.trim();
        let spec = spec_of(k).ok_or_else(|| err(format!("unknown key `{k}`")))?;
        if let Some(sec) = &section {
            if sec != spec.section {
                return Err(err(format!(
                    "key `{k}` belongs in [{}], not [{sec}]",
                    spec.section
                )));
            }
        }
        if let Some(prev) = seen.insert(spec.name, line) {
            return Err(err(format!("key `{k}` already set on line {prev}")));
        }
        let value = parse_value(spec, v).map_err(&err)?;
        s.values.insert(spec.name, (value, Origin::File(line)));
    }
    s.check_ranges()?;
    Ok(s)
}

impl Settings {
    pub fn defaults() -> Self {
        let mut values = BTreeMap::new();
        for spec in KEYS {
            if !spec.default.is_empty() {
                let v = parse_value(spec, spec.default).expect("defaults parse");
                values.insert(spec.name, (v, Origin::Default));
            }
        }
        Settings { values }
    }

    /// Applies a `--key value` override.
    pub fn set_cli(&mut self, key: &str, raw: &str) -> Result<()> {
        let spec = spec_of(key).ok_or_else(|| Error::config(format!("unknown flag `--{key}`")))?;
        let v = parse_value(spec, raw).map_err(|m| Error::config(format!("--{key}: {m}")))?;
        self.values.insert(spec.name, (v, Origin::Cli));
        self.check_ranges()
    }

    pub fn set_seed_from_env(&mut self, raw: &str) -> Result<()> {
        let seed = raw.trim().parse::<u64>().map_err(|_| {
            Error::config(format!(
                "BCPP_SEED must be a nonnegative integer, got `{raw}`"
            ))
        })?;
        self.values
            .insert("master_seed", (Value::Int(seed), Origin::Env));
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&(Value, Origin)> {
        self.values.get(key)
    }

    fn origin(&self, key: &str) -> Origin {
        self.raw(key).map_or(Origin::Default, |v| v.1)
    }

    /// Error pointing at the line (if any) that set `key`.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> Error {
        match self.origin(key).line() {
            Some(line) => Error::ConfigLine {
                line,
                message: message.into(),
            },
            None => Error::config(message),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        match self.raw(key) {
            Some((Value::Int(v), _)) => Ok(*v as usize),
            _ => Err(Error::config(format!("`{key}` is not set"))),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.usize(key).map(|v| v as u64)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        match self.raw(key) {
            Some((Value::Real(v), _)) => Ok(*v),
            _ => Err(Error::config(format!("`{key}` is not set"))),
        }
    }

    pub fn text(&self, key: &str) -> Result<&str> {
        match self.raw(key) {
            Some((Value::Text(v), _)) => Ok(v),
            _ => Err(Error::config(format!("`{key}` is not set"))),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        match self.raw(key) {
            Some((Value::IntList(v), _)) => Ok(v.iter().map(|&x| x as usize).collect()),
            _ => Err(Error::config(format!("`{key}` is not set"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Option<Vec<f64>> {
        match self.raw(key) {
            Some((Value::RealList(v), _)) => Some(v.clone()),
            _ => None,
        }
    }

    /// Times for multi-time subcommands: `t_list` if set, else `[t]`.
    pub fn times(&self) -> Result<Vec<f64>> {
        match self.f64_list("t_list") {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Ok(vec![self.f64("t")?]),
        }
    }

    /// Per-key range checks that do not depend on other keys.
    fn check_ranges(&self) -> Result<()> {
        let positive = [
            "lambda",
            "profile_width",
            "profile_radius",
            "profile_height",
            "test_radius",
            "test_height",
            "grid_step",
            "tol",
        ];
        for k in positive {
            if let Some((Value::Real(v), _)) = self.raw(k) {
                if *v <= 0.0 {
                    return Err(self.error_at(k, format!("`{k}` must be positive, got {v}")));
                }
            }
        }
        if let Some((Value::Real(v), _)) = self.raw("half_width") {
            if *v < 0.0 {
                return Err(
                    self.error_at("half_width", format!("`half_width` must be >= 0, got {v}"))
                );
            }
        }
        if let Some((Value::Real(v), _)) = self.raw("t") {
            if *v < 0.0 {
                return Err(self.error_at("t", format!("`t` must be >= 0, got {v}")));
            }
        }
        if let Some(ts) = self.f64_list("t_list") {
            if ts.iter().any(|&t| t < 0.0) {
                return Err(self.error_at("t_list", "`t_list` entries must be >= 0"));
            }
        }
        for (k, min) in [
            ("d", 1),
            ("L", 3),
            ("N", 1),
            ("replicas", 2),
            ("c_L", 1),
            ("R", 2),
            ("quad_order", 1),
            ("quad_panels", 1),
            ("samples", 2),
        ] {
            if let Some((Value::Int(v), _)) = self.raw(k) {
                if (*v as usize) < min {
                    let rule = if k == "L" { " (torus rule L >= 3)" } else { "" };
                    return Err(self.error_at(k, format!("`{k}` must be >= {min}{rule}, got {v}")));
                }
            }
        }
        if let Some((Value::IntList(v), _)) = self.raw("N_list") {
            if v.is_empty() || v.contains(&0) {
                return Err(self.error_at("N_list", "`N_list` must be nonempty with every N >= 1"));
            }
        }
        for k in ["profile", "test_fn", "method"] {
            let allowed: &[&str] = match k {
                "profile" => &["gaussian_bump", "constant_bump", "smooth_box"],
                "test_fn" => &["cosine_bump", "polynomial_bump"],
                _ => &["linear_solve", "monte_carlo"],
            };
            if let Some((Value::Text(v), _)) = self.raw(k) {
                if !allowed.contains(&v.as_str()) {
                    return Err(
                        self.error_at(k, format!("`{k}` must be one of {allowed:?}, got `{v}`"))
                    );
                }
            }
        }
        Ok(())
    }

    /// Every set key in a fixed order, as a valid config file; the run hash
    /// is taken over this text.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for spec in KEYS {
            if let Some((v, _)) = self.raw(spec.name) {
                if spec.section != section {
                    section = spec.section;
                    out.push_str(&format!("[{section}]\n"));
                }
                out.push_str(&format!("{} = {}\n", spec.name, v));
            }
        }
        out
    }

    fn center(&self, key: &str, dim: usize) -> Result<Vec<f64>> {
        match self.f64_list(key) {
            None => Ok(vec![0.0; dim]),
            Some(c) if c.len() == dim => Ok(c),
            Some(c) => {
                Err(self.error_at(key, format!("`{key}` has {} entries, d = {dim}", c.len())))
            }
        }
    }

    pub fn profile(&self) -> Result<DensityProfile<f64>> {
        let d = self.usize("d")?;
        let center = self.center("profile_center", d)?;
        let h = self.f64("profile_height")?;
        let p = match self.text("profile")? {
            "gaussian_bump" => DensityProfile::gaussian_bump(center, self.f64("profile_width")?, h),
            "constant_bump" => {
                DensityProfile::constant_bump(center, self.f64("profile_radius")?, h)
            }
            _ => DensityProfile::smooth_box(
                center,
                self.f64("profile_radius")?,
                self.f64("profile_taper")?,
                h,
            ),
        };
        p.map_err(|e| self.error_at("profile", e.to_string()))
    }

    pub fn test_function(&self) -> Result<TestFunction<f64>> {
        let d = self.usize("d")?;
        let center = self.center("test_center", d)?;
        let (r, h) = (self.f64("test_radius")?, self.f64("test_height")?);
        let g = match self.text("test_fn")? {
            "cosine_bump" => TestFunction::cosine_bump(center, r, h),
            _ => TestFunction::polynomial_bump(center, r, h),
        };
        g.map_err(|e| self.error_at("test_fn", e.to_string()))
    }

    /// The scaling-experiment view of these settings, fully validated.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let d = self.usize("d")?;
        let mut cfg = ExperimentConfig::new(
            d,
            self.f64("lambda")?,
            self.profile()?,
            self.test_function()?,
        );
        cfg.n_list = self.usize_list("N_list")?;
        cfg.t_list = match self.f64_list("t_list") {
            Some(v) if !v.is_empty() => v,
            _ => vec![0.05],
        };
        cfg.replicas = self.usize("replicas")?;
        cfg.c_l = self.usize("c_L").unwrap_or(DEFAULT_C_L);
        cfg.master_seed = self.u64("master_seed")?;
        cfg.output = Some(self.text("output")?.into());
        cfg.workers = self.usize("workers")?;
        cfg.heat_order = self.usize("heat_order")?;
        cfg.quadrature = SpatialQuadrature {
            order: self.usize("quad_order")?,
            panels: self.usize("quad_panels")?,
        };
        for &n in &cfg.n_list {
            let side = cfg.c_l * n;
            if side < 3 {
                return Err(self.error_at(
                    "c_L",
                    format!("torus rule gives L = c_L * N = {side} for N = {n}, violating L >= 3"),
                ));
            }
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => {
                let k = if m.contains("lambda") {
                    "lambda"
                } else if m.contains("test function") {
                    "test_radius"
                } else if m.contains("profile") {
                    "profile"
                } else if m.contains("replicas") {
                    "replicas"
                } else {
                    "N_list"
                };
                self.error_at(k, m)
            }
            other => other,
        })?;
        Ok(cfg)
    }
}

/// Parses text and returns the validated experiment config.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    parse_config(text)?.experiment()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = parse_experiment_config(
            "[model]\nd = 3\nlambda = 0.6\n[experiment]\nN_list = [4, 8]\n",
        )
        .unwrap();
        assert_eq!(cfg.dim, 3);
        assert_eq!(cfg.lambda, 0.6);
        assert_eq!(cfg.n_list, vec![4, 8]);
        assert_eq!(cfg.c_l, 8);
        assert_eq!(cfg.replicas, 200);
        assert_eq!(cfg.t_list, vec![0.05]);
        assert_eq!(cfg.profile.kind_name(), "gaussian_bump");
    }

    #[test]
    fn negative_lambda_names_the_key_and_line() {
        let e = parse_config("# comment\n[model]\nlambda = -1\n").unwrap_err();
        match e {
            Error::ConfigLine { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("lambda"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn torus_rule_below_three_is_rejected() {
        let s = parse_config("[experiment]\nN_list = 1, 2\nc_L = 1\n[profile]\nprofile_width = 0.05\n[test_function]\ntest_radius = 0.2\n").unwrap();
        let e = s.experiment().unwrap_err();
        assert!(e.to_string().contains("L >= 3"), "{e}");
        assert!(matches!(e, Error::ConfigLine { line: 3, .. }));
    }

    #[test]
    fn unknown_keys_sections_and_type_errors() {
        assert!(matches!(
            parse_config("[model]\nfoo = 1\n"),
            Err(Error::ConfigLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("[nope]\n"),
            Err(Error::ConfigLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("[model]\nd = three\n"),
            Err(Error::ConfigLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("[lattice]\nd = 3\n"),
            Err(Error::ConfigLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("d = 3\nd = 4\n"),
            Err(Error::ConfigLine { line: 2, .. })
        ));
        assert!(parse_config("d 3\n").is_err());
    }

    #[test]
    fn cli_overrides_and_canonical_text_is_stable() {
        let mut a = parse_config("[model]\nd = 2   # trailing\n").unwrap();
        let b = parse_config("[model]\nd=2\n").unwrap();
        assert_eq!(a.canonical_text(), b.canonical_text());
        a.set_cli("lambda", "1.5").unwrap();
        assert_eq!(a.f64("lambda").unwrap(), 1.5);
        assert!(a.set_cli("lambda", "0").is_err());
        assert!(a.set_cli("bogus", "1").is_err());
        a.set_seed_from_env("77").unwrap();
        assert_eq!(a.u64("master_seed").unwrap(), 77);
        assert!(a.canonical_text().contains("\nmaster_seed = 77\n"));
    }

    #[test]
    fn lists_accept_brackets_or_bare_commas() {
        let s = parse_config("t_list = [0.5, 1]\nN_list = 4,8,16\n").unwrap();
        assert_eq!(s.times().unwrap(), vec![0.5, 1.0]);
        assert_eq!(s.usize_list("N_list").unwrap(), vec![4, 8, 16]);
        assert_eq!(Settings::defaults().times().unwrap(), vec![1.0]);
    }
}
