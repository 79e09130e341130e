//! One function per subcommand. Each writes its CSV files into the output
//! directory and returns the files and the tolerance checks it ran.

use std::path::{Path, PathBuf};

use super::config::Settings;
use super::output::{write_csv, CheckRecord, ColumnKind, Field, Schema};
use crate::error::{Error, Result};
use crate::hydro;
use crate::kernels::{
    estimate_gamma, extrapolate_in_radius, mc_return_probability, return_table, unit_e1,
    KernelTable, ReturnMethod, TruncatedReturn,
};
use crate::lattice::TorusGeometry;
use crate::moments::{
    bound_check, build_pair_generator, check_pair_positivity, evolve_pair_moments, mc_pair_moments,
    pair_moments_of_field, PairKind,
};
use crate::pde::{fd_heat_solver, fd_reach, weak_residual, HeatSolution};
use crate::process::{init_process, site_weights};
use crate::seeding::derive_seed;

use ColumnKind::{Int, Real, Text};

/// Files written and checks evaluated by one subcommand.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub checks: Vec<CheckRecord>,
}

impl Outcome {
    fn csv(&mut self, dir: &Path, name: &str, schema: &Schema, rows: &[Vec<Field>]) -> Result<()> {
        let path = dir.join(name);
        write_csv(rows, schema, &path)?;
        self.outputs.push(path);
        Ok(())
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckRecord {
            name: name.into(),
            passed,
            detail,
        });
    }
}

fn coords(c: &[i64]) -> impl Iterator<Item = Field> + '_ {
    c.iter().map(|&v| Field::Int(v))
}

fn z_score(estimate: f64, exact: f64, se: f64) -> f64 {
    let diff = estimate - exact;
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * exact.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn simulate(s: &Settings, dir: &Path) -> Result<Outcome> {
    let (d, side, n) = (s.usize("d")?, s.usize("L")?, s.usize("N")?);
    let t = s.f64("t")?;
    let geom = TorusGeometry::new(d, side)?;
    let mut p = init_process(
        &geom,
        s.f64("lambda")?,
        &s.profile()?,
        n,
        s.u64("master_seed")?,
    )?;
    let mass0 = p.total_mass();
    p.advance(t)?;
    let mut rows = Vec::with_capacity(geom.n_sites());
    for (x, v) in p.field_values().into_iter().enumerate() {
        let c = geom.coord_of_index(x);
        let mut row = vec![Field::Real(t)];
        row.extend(coords(c.components()));
        row.push(v.into());
        rows.push(row);
    }
    let schema = Schema::new(&[("t", Real), ("eta", Real)]).with_axes(1, "x", d, Int);
    let mut out = Outcome::default();
    out.csv(dir, "simulate.csv", &schema, &rows)?;
    let summary = Schema::new(&[
        ("t", Real),
        ("initial_mass", Real),
        ("mass", Real),
        ("deaths", Int),
        ("infections", Int),
    ]);
    let c = p.event_counts();
    out.csv(
        dir,
        "simulate_summary.csv",
        &summary,
        &[vec![
            t.into(),
            mass0.into(),
            p.total_mass().into(),
            Field::Int(c.deaths as i64),
            Field::Int(c.infections as i64),
        ]],
    )?;
    Ok(out)
}

pub fn kernel(s: &Settings, dir: &Path) -> Result<Outcome> {
    let (d, side, lambda) = (s.usize("d")?, s.usize("L")?, s.f64("lambda")?);
    let geom = TorusGeometry::new(d, side)?;
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for t in s.times()? {
        let table = KernelTable::new(t, lambda, &geom)?;
        let mut mass = 0.0;
        for y in 0..geom.n_sites() {
            let p = table.prob(geom.origin(), y);
            mass += p;
            let mut row = vec![
                Field::Int(d as i64),
                Field::Int(side as i64),
                lambda.into(),
                t.into(),
            ];
            row.extend(coords(geom.displacement(geom.origin(), y).components()));
            row.push(p.into());
            rows.push(row);
        }
        out.check(
            &format!("kernel_mass_t{t}"),
            (mass - 1.0).abs() <= 1e-10,
            format!("sum of probabilities {mass:.16e}"),
        );
    }
    let schema = Schema::new(&[
        ("d", Int),
        ("L", Int),
        ("lambda", Real),
        ("t", Real),
        ("probability", Real),
    ])
    .with_axes(4, "dx", d, Int);
    out.csv(dir, "kernel.csv", &schema, &rows)?;
    Ok(out)
}

pub fn gamma(s: &Settings, dir: &Path) -> Result<Outcome> {
    let (d, r, tol) = (s.usize("d")?, s.usize("R")?, s.f64("tol")?);
    let e1 = unit_e1(d);
    let row = |r_solve: usize, method: &str, k: f64, ci: f64| {
        vec![
            Field::Int(d as i64),
            Field::Int(r_solve as i64),
            method.into(),
            k.into(),
            (1.0 - k).into(),
            ci.into(),
        ]
    };
    let mut rows = Vec::new();
    match s.text("method")? {
        "linear_solve" => {
            let k = TruncatedReturn::solve(d, r, tol)?.k(&e1);
            let companion = s.usize("R_companion")?;
            if companion == 0 {
                rows.push(row(r, "linear_solve", k, f64::NAN));
            } else {
                if companion == r {
                    return Err(s.error_at("R_companion", "`R_companion` must differ from `R`"));
                }
                let kc = TruncatedReturn::solve(d, companion, tol)?.k(&e1);
                let ext = extrapolate_in_radius(companion, kc, r, k);
                rows.push(row(r, "linear_solve", k, (ext - k).abs()));
                rows.push(row(companion, "linear_solve", kc, (ext - kc).abs()));
                rows.push(row(r.max(companion), "extrapolated", ext, (k - kc).abs()));
            }
        }
        _ => {
            let est = mc_return_probability(
                d,
                &e1,
                s.u64("walks")?,
                s.u64("horizon")?,
                s.u64("master_seed")?,
            )?;
            rows.push(row(
                0,
                "monte_carlo",
                est.corrected,
                1.96 * est.corrected_se,
            ));
        }
    }
    let schema = Schema::new(&[
        ("d", Int),
        ("R_solve", Int),
        ("method", Text),
        ("k_e1", Real),
        ("gamma", Real),
        ("ci", Real),
    ]);
    let mut out = Outcome::default();
    out.csv(dir, "gamma.csv", &schema, &rows)?;
    Ok(out)
}

pub fn moments(s: &Settings, dir: &Path) -> Result<Outcome> {
    let (d, side, lambda, n) = (
        s.usize("d")?,
        s.usize("L")?,
        s.f64("lambda")?,
        s.usize("N")?,
    );
    let geom = TorusGeometry::new(d, side)?;
    let profile = s.profile()?;
    let init = site_weights(&geom, n, |u| profile.eval(u));
    let gen = build_pair_generator(lambda, &geom, PairKind::MLambda)?;
    let gamma0 = pair_moments_of_field(&init);
    let (replicas, seed) = (s.usize("replicas")?, s.u64("master_seed")?);
    let ns = geom.n_sites();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (ti, t) in s.times()?.into_iter().enumerate() {
        let exact = evolve_pair_moments(&gamma0, t, &gen)?;
        let mc = mc_pair_moments(
            &geom,
            lambda,
            &init,
            t,
            replicas,
            derive_seed(seed, &[ti as u64]),
        )?;
        for x in 0..ns {
            for y in 0..ns {
                let i = x * ns + y;
                let z = z_score(mc.mean[i], exact[i], mc.se[i]);
                worst = worst.max(z.abs());
                let mut row: Vec<Field> = coords(geom.coord_of_index(x).components()).collect();
                row.extend(coords(geom.coord_of_index(y).components()));
                row.extend([
                    t.into(),
                    exact[i].into(),
                    mc.mean[i].into(),
                    mc.se[i].into(),
                    z.into(),
                ]);
                rows.push(row);
            }
        }
    }
    let schema = Schema::new(&[
        ("t", Real),
        ("gamma", Real),
        ("mc_estimate", Real),
        ("se", Real),
        ("z", Real),
    ])
    .with_axes(0, "y", d, Int)
    .with_axes(0, "x", d, Int);
    let mut out = Outcome::default();
    out.csv(dir, "moments.csv", &schema, &rows)?;
    out.check(
        "pair_moment_z",
        worst <= 4.0,
        format!("max |z| = {worst:.3}"),
    );
    Ok(out)
}

pub fn bound(s: &Settings, dir: &Path) -> Result<Outcome> {
    let (d, lambda, r, tol) = (
        s.usize("d")?,
        s.f64("lambda")?,
        s.usize("R")?,
        s.f64("tol")?,
    );
    let wide = match s.usize("R_wide")? {
        0 => 2 * r,
        w => w,
    };
    let gamma = estimate_gamma(d, s.usize("gamma_R_lo")?, s.usize("gamma_R_hi")?, tol)?.gamma;
    let table = return_table(
        d,
        r,
        ReturnMethod::LinearSolve {
            r_solve: 2 * r,
            r_companion: Some(r),
            tol,
        },
        0,
    )?;
    let times = s.times()?;
    let rows = bound_check(lambda, d, r, wide, &times, &table, gamma)?;
    let max_ratio = rows
        .iter()
        .map(|b| b.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_delta = rows.iter().map(|b| b.delta).fold(0.0, f64::max);
    let csv_rows: Vec<Vec<Field>> = rows
        .iter()
        .map(|b| {
            let mut row: Vec<Field> = coords(&b.coord).collect();
            row.extend([
                b.t.into(),
                b.j.into(),
                b.bound.into(),
                b.ratio.into(),
                Field::Int(b.radius as i64),
                b.delta.into(),
            ]);
            row
        })
        .collect();
    let schema = Schema::new(&[
        ("t", Real),
        ("J", Real),
        ("bound", Real),
        ("ratio", Real),
        ("R", Int),
        ("R_doubled_delta", Real),
    ])
    .with_axes(0, "x", d, Int);
    let mut out = Outcome::default();
    out.csv(dir, "bound_check.csv", &schema, &csv_rows)?;
    out.check(
        "second_moment_bound",
        max_ratio <= 1.0 + 1e-6,
        format!("max J/bound = {max_ratio:.9}, gamma = {gamma:.6}"),
    );
    out.check(
        "radius_doubling",
        max_delta < 1e-4,
        format!("max |J_R - J_2R| = {max_delta:.3e} (R = {r}, wide R = {wide})"),
    );
    Ok(out)
}

pub fn positivity(s: &Settings, dir: &Path) -> Result<Outcome> {
    let (d, side, lambda) = (s.usize("d")?, s.usize("L")?, s.f64("lambda")?);
    let geom = TorusGeometry::new(d, side)?;
    let mut rows = Vec::new();
    let mut worst = f64::INFINITY;
    for t in s.times()? {
        let r = check_pair_positivity(t, lambda, &geom)?;
        worst = worst.min(r.min_entry);
        rows.push(vec![
            Field::Int(d as i64),
            Field::Int(side as i64),
            lambda.into(),
            t.into(),
            r.min_entry.into(),
            r.min_shifted_entry.into(),
        ]);
    }
    let schema = Schema::new(&[
        ("d", Int),
        ("L", Int),
        ("lambda", Real),
        ("t", Real),
        ("min_entry", Real),
        ("min_shifted_entry", Real),
    ]);
    let mut out = Outcome::default();
    out.csv(dir, "positivity.csv", &schema, &rows)?;
    out.check(
        "pair_positivity",
        worst >= -1e-9,
        format!("min entry {worst:.3e}"),
    );
    Ok(out)
}

pub fn pde(s: &Settings, dir: &Path) -> Result<Outcome> {
    let (d, lambda) = (s.usize("d")?, s.f64("lambda")?);
    let profile = s.profile()?;
    let g = s.test_function()?;
    let (h, half, samples) = (
        s.f64("grid_step")?,
        s.f64("half_width")?,
        s.usize("samples")?,
    );
    let heat = HeatSolution::new(profile.clone(), lambda, s.usize("heat_order")?)?;
    let quad = s.experiment_quadrature()?;
    let tol = (3.0 * h * h).max(1e-3);
    let mut rows = Vec::new();
    let mut weak_rows = Vec::new();
    let (mut worst, mut worst_weak): (f64, f64) = (0.0, 0.0);
    for t in s.times()? {
        let half = if half > 0.0 {
            half
        } else {
            (fd_reach(&profile, t, lambda) / h).ceil() * h
        };
        let fd = fd_heat_solver(&profile, t, lambda, h, half)?;
        for i in 0..samples {
            let mut u = profile.center().to_vec();
            u[0] += -half / 2.0 + half * i as f64 / (samples - 1) as f64;
            let exact = heat.eval(t, &u)?;
            let approx = fd
                .interpolate(&u)
                .ok_or_else(|| Error::internal("sample point outside the finite-difference box"))?;
            worst = worst.max((exact - approx).abs());
            let mut row = vec![Field::Real(t)];
            row.extend(u.iter().map(|&v| Field::Real(v)));
            row.extend([exact.into(), approx.into(), (exact - approx).abs().into()]);
            rows.push(row);
        }
        let w = weak_residual(&heat, &g, t, s.usize("time_steps")?, quad)?;
        worst_weak = worst_weak.max(w.abs());
        weak_rows.push(vec![t.into(), w.into()]);
    }
    let schema = Schema::new(&[
        ("t", Real),
        ("rho_explicit", Real),
        ("rho_fd", Real),
        ("abs_diff", Real),
    ])
    .with_axes(1, "u", d, Real);
    let mut out = Outcome::default();
    out.csv(dir, "pde.csv", &schema, &rows)?;
    out.csv(
        dir,
        "pde_weak.csv",
        &Schema::new(&[("t", Real), ("weak_residual", Real)]),
        &weak_rows,
    )?;
    out.check(
        "explicit_vs_fd",
        worst <= tol,
        format!("max |diff| = {worst:.3e}, tolerance {tol:.3e}"),
    );
    out.check(
        "weak_residual",
        worst_weak <= 1e-4,
        format!("max |residual| = {worst_weak:.3e}"),
    );
    Ok(out)
}

fn hydro_schema() -> Schema {
    Schema::new(&[
        ("d", Int),
        ("lambda", Real),
        ("N", Int),
        ("t", Real),
        ("replicas", Int),
        ("mean_pairing", Real),
        ("variance", Real),
        ("target", Real),
        ("abs_error", Real),
        ("se", Real),
    ])
}

pub fn hydro_rows(rows: &[hydro::ReportRow]) -> Vec<Vec<Field>> {
    rows.iter()
        .map(|r| {
            vec![
                r.d.into(),
                r.lambda.into(),
                r.n.into(),
                r.t.into(),
                r.replicas.into(),
                r.mean_pairing.into(),
                r.variance.into(),
                r.target.into(),
                r.abs_error.into(),
                r.se.into(),
            ]
        })
        .collect()
}

/// `(t, values over N in n_list order)` for each configured time.
fn per_time<R>(
    rows: &[R],
    t_of: impl Fn(&R) -> f64,
    v_of: impl Fn(&R) -> f64,
) -> Vec<(f64, Vec<f64>)> {
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in rows {
        let t = t_of(r);
        match out.iter_mut().find(|e| e.0 == t) {
            Some(e) => e.1.push(v_of(r)),
            None => out.push((t, vec![v_of(r)])),
        }
    }
    out
}

pub fn hydro_cmd(s: &Settings, dir: &Path) -> Result<Outcome> {
    let cfg = s.experiment()?;
    let rows = hydro::run_convergence_experiment(&cfg)?;
    let mut out = Outcome::default();
    out.csv(dir, "hydro.csv", &hydro_schema(), &hydro_rows(&rows))?;
    if cfg.n_list.len() > 1 {
        for (t, errs) in per_time(&rows, |r| r.t, |r| r.abs_error)
            .into_iter()
            .filter(|e| e.0 > 0.0)
        {
            out.check(
                &format!("error_decreasing_t{t}"),
                strictly_decreasing(&errs),
                format!("|mean - target| over N = {errs:?}"),
            );
        }
    }
    Ok(out)
}

pub fn variance_cmd(s: &Settings, dir: &Path) -> Result<Outcome> {
    let cfg = s.experiment()?;
    let rows = hydro::variance_sweep(&cfg)?;
    let csv_rows: Vec<Vec<Field>> = rows
        .iter()
        .map(|r| {
            vec![
                r.d.into(),
                r.lambda.into(),
                r.n.into(),
                r.t.into(),
                r.replicas.into(),
                r.variance.into(),
                r.ci_low.into(),
                r.ci_high.into(),
            ]
        })
        .collect();
    let schema = Schema::new(&[
        ("d", Int),
        ("lambda", Real),
        ("N", Int),
        ("t", Real),
        ("replicas", Int),
        ("variance", Real),
        ("ci_low", Real),
        ("ci_high", Real),
    ]);
    let mut out = Outcome::default();
    out.csv(dir, "variance.csv", &schema, &csv_rows)?;
    if cfg.n_list.len() > 1 {
        let mut fits = Vec::new();
        for (t, vars) in per_time(&rows, |r| r.t, |r| r.variance)
            .into_iter()
            .filter(|e| e.0 > 0.0)
        {
            out.check(
                &format!("variance_decreasing_t{t}"),
                strictly_decreasing(&vars),
                format!("variance over N = {vars:?}"),
            );
            let at_t: Vec<_> = rows.iter().filter(|r| r.t == t).cloned().collect();
            let fit = hydro::envelope_fit(&at_t)?;
            fits.push(vec![
                t.into(),
                fit.constant.into(),
                fit.coefficient.into(),
                Field::Int(fit.nonnegative as i64),
            ]);
        }
        let schema = Schema::new(&[
            ("t", Real),
            ("constant", Real),
            ("coefficient_N_minus_d", Real),
            ("nonnegative", Int),
        ]);
        out.csv(dir, "variance_envelope.csv", &schema, &fits)?;
    }
    Ok(out)
}

pub fn martingale_cmd(s: &Settings, dir: &Path) -> Result<Outcome> {
    let cfg = s.experiment()?;
    let cells = hydro::run_cells(&cfg)?;
    let rows = hydro::martingale_rows(&cfg, &cells);
    let mass = hydro::mass_rows(&cfg, &cells);
    let csv_rows: Vec<Vec<Field>> = rows
        .iter()
        .map(|r| {
            vec![
                r.d.into(),
                r.lambda.into(),
                r.n.into(),
                r.t.into(),
                r.replicas.into(),
                r.mart_mean.into(),
                r.mart_var.into(),
                r.predicted_qv.into(),
                r.z_mean.into(),
            ]
        })
        .collect();
    let schema = Schema::new(&[
        ("d", Int),
        ("lambda", Real),
        ("N", Int),
        ("t", Real),
        ("replicas", Int),
        ("mart_mean", Real),
        ("mart_var", Real),
        ("predicted_qv", Real),
        ("z_mean", Real),
    ]);
    let mass_rows: Vec<Vec<Field>> = mass
        .iter()
        .map(|r| {
            vec![
                r.d.into(),
                r.lambda.into(),
                r.n.into(),
                r.t.into(),
                r.replicas.into(),
                r.mean_mass.into(),
                r.initial_mass.into(),
                r.se.into(),
                r.z.into(),
            ]
        })
        .collect();
    let mass_schema = Schema::new(&[
        ("d", Int),
        ("lambda", Real),
        ("N", Int),
        ("t", Real),
        ("replicas", Int),
        ("mean_mass", Real),
        ("initial_mass", Real),
        ("se", Real),
        ("z", Real),
    ]);
    let mut out = Outcome::default();
    out.csv(dir, "martingale.csv", &schema, &csv_rows)?;
    out.csv(dir, "mass.csv", &mass_schema, &mass_rows)?;
    let worst = rows.iter().map(|r| r.z_mean.abs()).fold(0.0, f64::max);
    out.check(
        "martingale_mean",
        worst <= 3.0,
        format!("max |z| = {worst:.3}"),
    );
    let worst_mass = mass.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    out.check(
        "mass_conservation",
        worst_mass <= 3.0,
        format!("max |z| = {worst_mass:.3}"),
    );
    if cfg.n_list.len() > 2 {
        let target = 2.0 - cfg.dim as f64;
        for (t, vars) in per_time(&rows, |r| r.t, |r| r.mart_var)
            .into_iter()
            .filter(|e| e.0 > 0.0)
        {
            let ns: Vec<f64> = cfg.n_list.iter().map(|&n| n as f64).collect();
            let slope = hydro::log_log_slope(&ns, &vars)?;
            out.check(
                &format!("martingale_variance_slope_t{t}"),
                (slope - target).abs() <= 0.5,
                format!("slope {slope:.3}, expected {target} +/- 0.5"),
            );
        }
    }
    Ok(out)
}

impl Settings {
    fn experiment_quadrature(&self) -> Result<crate::pde::SpatialQuadrature> {
        Ok(crate::pde::SpatialQuadrature {
            order: self.usize("quad_order")?,
            panels: self.usize("quad_panels")?,
        })
    }
}
