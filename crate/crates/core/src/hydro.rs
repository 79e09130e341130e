//! Desk-scale hydrodynamic-limit experiments: diffusively scaled processes,
//! empirical-measure pairings against the heat solution, variance decay,
//! Dynkin martingale diagnostics and expected-mass conservation.
//!
//! The scaled process at macroscopic time `t` is the unscaled process at
//! microscopic time `t N²` on a torus of side `L = c_L N`.

use std::path::PathBuf;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::pde::{HeatSolution, SpatialQuadrature};
use crate::process::{
    check_window, init_process, site_weights, CoupledTori, DensityProfile, Event, PathObserver,
    ScaledField, TestFunction,
};
use crate::seeding;

/// Declarative description of a scaling experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub lambda: f64,
    pub profile: DensityProfile<f64>,
    pub test_fn: TestFunction<f64>,
    pub n_list: Vec<usize>,
    /// Macroscopic times.
    pub t_list: Vec<f64>,
    pub replicas: usize,
    /// Torus side rule `L = c_L · N`.
    pub c_l: usize,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Quadrature order for the heat solution.
    pub heat_order: usize,
    pub quadrature: SpatialQuadrature,
}

pub const DEFAULT_C_L: usize = 8;

impl ExperimentConfig {
    /// A config with the documented defaults for everything but the model.
    pub fn new(
        dim: usize,
        lambda: f64,
        profile: DensityProfile<f64>,
        test_fn: TestFunction<f64>,
    ) -> Self {
        ExperimentConfig {
            dim,
            lambda,
            profile,
            test_fn,
            n_list: vec![4, 8],
            t_list: vec![0.05],
            replicas: 200,
            c_l: DEFAULT_C_L,
            master_seed: 1,
            output: None,
            workers: 0,
            heat_order: 16,
            quadrature: SpatialQuadrature::default(),
        }
    }

    pub fn side(&self, n: usize) -> usize {
        self.c_l * n
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("d must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::config("N_list must be nonempty with every N >= 1"));
        }
        if self.t_list.is_empty() || self.t_list.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::config(
                "t_list must be nonempty with finite times >= 0",
            ));
        }
        if self.replicas < 2 {
            return Err(Error::config(format!(
                "replicas must be at least 2, got {}",
                self.replicas
            )));
        }
        if self.profile.dim() != self.dim || self.test_fn.dim() != self.dim {
            return Err(Error::config(
                "profile and test function must have dimension d",
            ));
        }
        self.profile.validate()?;
        self.test_fn.validate()?;
        for &n in &self.n_list {
            if self.side(n) < 3 {
                return Err(Error::config(format!(
                    "torus rule gives L = {} for N = {n}, violating L >= 3",
                    self.side(n)
                )));
            }
        }
        let quarter = self.c_l as f64 / 4.0;
        for (what, r) in [
            ("initial profile", self.profile.support_radius()),
            ("test function", self.test_fn.support_radius()),
        ] {
            if r > quarter {
                return Err(Error::config(format!(
                    "{what} support radius {r} exceeds c_L/4 = {quarter}; it must fit in half the torus"
                )));
            }
        }
        if self.heat_order < crate::pde::MIN_ORDER {
            return Err(Error::config(format!(
                "heat_order must be >= {}",
                crate::pde::MIN_ORDER
            )));
        }
        Ok(())
    }
}

/// `Δ_N G(x/N) = N² Σ_{y∼x} [G(y/N) - G(x/N)]` at a point of `Z^d`.
pub fn discrete_laplacian(g: &TestFunction<f64>, n_scale: usize, x: &[i64]) -> f64 {
    let n = n_scale as f64;
    let u: Vec<f64> = x.iter().map(|&c| c as f64 / n).collect();
    let g0 = g.eval(&u);
    let mut acc = 0.0;
    let mut v = u.clone();
    for a in 0..x.len() {
        for s in [-1.0, 1.0] {
            v[a] = u[a] + s / n;
            acc += g.eval(&v) - g0;
        }
        v[a] = u[a];
    }
    n * n * acc
}

/// Per-site weights shared by every replica at one scale `N`.
#[derive(Debug, Clone)]
struct ScaleWeights {
    geom: TorusGeometry,
    /// `N^{-d} G(x/N)`.
    pairing: Vec<f64>,
    /// `λ N^{-d} Σ_{y∼x} [G(y/N) - G(x/N)]`.
    drift: Vec<f64>,
    /// `N^{-2d} [G(x/N)² + λ Σ_{y∼x} G(y/N)²]`.
    carre: Vec<f64>,
}

impl ScaleWeights {
    fn new(cfg: &ExperimentConfig, n: usize) -> Result<Self> {
        let geom = TorusGeometry::new(cfg.dim, cfg.side(n))?;
        check_window(&geom, n, cfg.test_fn.support_radius(), "test function")?;
        let nd = (n as f64).powi(cfg.dim as i32);
        let g = site_weights(&geom, n, |u| cfg.test_fn.eval(u));
        let mut drift = vec![0.0; geom.n_sites()];
        let mut carre = vec![0.0; geom.n_sites()];
        for x in 0..geom.n_sites() {
            let mut diff = 0.0;
            let mut sq = 0.0;
            for dir in 0..geom.degree() {
                let y = geom.neighbor(x, dir);
                diff += g[y] - g[x];
                sq += g[y] * g[y];
            }
            drift[x] = cfg.lambda * diff / nd;
            carre[x] = (g[x] * g[x] + cfg.lambda * sq) / (nd * nd);
        }
        Ok(ScaleWeights {
            pairing: g.iter().map(|v| v / nd).collect(),
            drift,
            carre,
            geom,
        })
    }
}

/// Accumulates the Dynkin compensator and quadratic-variation functionals.
///
/// Sums are kept in physical units: `lin = Σ η(x) drift(x)` and
/// `quad = Σ η(x)² carre(x)` both scale by `e^{κ s}` resp. `e^{2κ s}` between
/// events, so each stretch integrates in closed form.
struct DynkinObserver<'a> {
    w: &'a ScaleWeights,
    kappa: f64,
    log_scale: f64,
    lin: f64,
    quad: f64,
    compensator: f64,
    predicted_qv: f64,
    realized_qv: f64,
}

impl<'a> DynkinObserver<'a> {
    fn new(w: &'a ScaleWeights, kappa: f64, values: &[f64]) -> Self {
        DynkinObserver {
            w,
            kappa,
            log_scale: 0.0,
            lin: values.iter().zip(&w.drift).map(|(v, d)| v * d).sum(),
            quad: values.iter().zip(&w.carre).map(|(v, c)| v * v * c).sum(),
            compensator: 0.0,
            predicted_qv: 0.0,
            realized_qv: 0.0,
        }
    }
}

impl PathObserver<f64> for DynkinObserver<'_> {
    fn on_interval(&mut self, field: &ScaledField<f64>, dt: f64) {
        let k = self.kappa;
        self.compensator += self.lin * crate::process::exp_integral(0.0, k, dt);
        self.predicted_qv += self.quad * crate::process::exp_integral(0.0, 2.0 * k, dt);
        self.lin *= (k * dt).exp();
        self.quad *= (2.0 * k * dt).exp();
        self.log_scale = field.log_scale() + k * dt;
    }

    fn on_event(&mut self, event: &Event, old: f64, new: f64) {
        let s = self.log_scale.exp();
        let (a, b) = (old * s, new * s);
        let x = event.site;
        self.lin += (b - a) * self.w.drift[x];
        self.quad += (b * b - a * a) * self.w.carre[x];
        let jump = (b - a) * self.w.pairing[x];
        self.realized_qv += jump * jump;
    }

    fn on_rescale(&mut self, factor: f64) {
        self.log_scale -= factor.ln();
    }
}

/// Path functionals of one replica at one `(N, t)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaOutcome {
    /// `⟨π^N_t, G⟩`.
    pub pairing: f64,
    pub initial_pairing: f64,
    /// `Σ_x η_t(x)`.
    pub mass: f64,
    pub initial_mass: f64,
    /// `M^N_t(G)`.
    pub martingale: f64,
    /// Time integral of the carré du champ along the path.
    pub predicted_qv: f64,
    /// Sum of squared jumps of `⟨π^N, G⟩`.
    pub realized_qv: f64,
    pub events: u64,
}

/// All replicas of one `(N, t)` cell, in replica order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub t_index: usize,
    pub t: f64,
    pub replicas: Vec<ReplicaOutcome>,
}

fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn run_replica(
    cfg: &ExperimentConfig,
    w: &ScaleWeights,
    n: usize,
    t_index: usize,
    t: f64,
    replica: usize,
) -> Result<ReplicaOutcome> {
    let seed = seeding::derive_seed(cfg.master_seed, &[n as u64, t_index as u64, replica as u64]);
    let mut p = init_process(&w.geom, cfg.lambda, &cfg.profile, n, seed)?;
    let values = p.field_values();
    let initial_pairing = p.pair_with_weights(&w.pairing);
    let initial_mass = p.total_mass();
    let mut obs = DynkinObserver::new(w, p.kappa(), &values);
    p.advance_observed(t * (n * n) as f64, &mut obs)?;
    let pairing = p.pair_with_weights(&w.pairing);
    Ok(ReplicaOutcome {
        pairing,
        initial_pairing,
        mass: p.total_mass(),
        initial_mass,
        martingale: pairing - initial_pairing - obs.compensator,
        predicted_qv: obs.predicted_qv,
        realized_qv: obs.realized_qv,
        events: p.event_counts().total(),
    })
}

/// Simulates every `(N, t)` cell; replicas run in parallel and are returned in order.
pub fn run_cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &n in &cfg.n_list {
        let w = ScaleWeights::new(cfg, n)?;
        for (t_index, &t) in cfg.t_list.iter().enumerate() {
            let replicas = with_pool(cfg.workers, || {
                (0..cfg.replicas)
                    .into_par_iter()
                    .map(|r| {
                        run_replica(cfg, &w, n, t_index, t, r)
                            .map_err(|e| e.context(format!("N = {n}, t = {t}, replica {r}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })??;
            cells.push(Cell {
                n,
                t_index,
                t,
                replicas,
            });
        }
    }
    Ok(cells)
}

/// Two-pass mean and unbiased variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub se: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64> + Clone) -> Self {
        // shifted by the first value so constant samples give exactly zero spread
        let shift = values.clone().into_iter().next().unwrap_or(0.0);
        let (count, sum) = values
            .clone()
            .into_iter()
            .fold((0usize, 0.0), |(c, s), v| (c + 1, s + (v - shift)));
        let mean = shift + sum / count as f64;
        let ss: f64 = values.into_iter().map(|v| (v - mean) * (v - mean)).sum();
        let variance = if count > 1 {
            ss / (count - 1) as f64
        } else {
            0.0
        };
        Summary {
            count,
            mean,
            variance,
            se: (variance / count as f64).sqrt(),
        }
    }

    /// `mean / se`, zero when both vanish.
    pub fn z(&self, reference: f64) -> f64 {
        let diff = self.mean - reference;
        if self.se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY * diff.signum()
            }
        } else {
            diff / self.se
        }
    }
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub d: usize,
    pub lambda: f64,
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub mean_pairing: f64,
    pub variance: f64,
    pub target: f64,
    pub abs_error: f64,
    pub se: f64,
}

/// `∫ ρ(t, u) G(u) du` for every configured time.
pub fn targets(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let heat = HeatSolution::new(cfg.profile.clone(), cfg.lambda, cfg.heat_order)?;
    cfg.t_list
        .iter()
        .map(|&t| heat.pair_with(t, &cfg.test_fn, cfg.quadrature))
        .collect()
}

pub fn report_rows(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<ReportRow>> {
    let targets = targets(cfg)?;
    Ok(cells
        .iter()
        .map(|c| {
            let s = Summary::of(c.replicas.iter().map(|r| r.pairing));
            let target = targets[c.t_index];
            ReportRow {
                d: cfg.dim,
                lambda: cfg.lambda,
                n: c.n,
                t: c.t,
                replicas: s.count,
                mean_pairing: s.mean,
                variance: s.variance,
                target,
                abs_error: (s.mean - target).abs(),
                se: s.se,
            }
        })
        .collect())
}

pub fn run_convergence_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let cells = run_cells(cfg)?;
    report_rows(cfg, &cells)
}

/// Sample variance of the pairing with a 95% chi-square interval.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub d: usize,
    pub lambda: f64,
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn variance_rows(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<VarianceRow>> {
    cells
        .iter()
        .map(|c| {
            let s = Summary::of(c.replicas.iter().map(|r| r.pairing));
            if s.count < 2 {
                return Err(Error::config("variance needs at least 2 replicas"));
            }
            let dof = (s.count - 1) as f64;
            let chi =
                ChiSquared::new(dof).map_err(|e| Error::internal(format!("chi-square: {e}")))?;
            Ok(VarianceRow {
                d: cfg.dim,
                lambda: cfg.lambda,
                n: c.n,
                t: c.t,
                replicas: s.count,
                variance: s.variance,
                ci_low: dof * s.variance / chi.inverse_cdf(0.975),
                ci_high: dof * s.variance / chi.inverse_cdf(0.025),
            })
        })
        .collect()
}

pub fn variance_sweep(cfg: &ExperimentConfig) -> Result<Vec<VarianceRow>> {
    let cells = run_cells(cfg)?;
    variance_rows(cfg, &cells)
}

/// Least-squares fit `Var ≈ a + b N^{-d}` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub constant: f64,
    pub coefficient: f64,
    pub nonnegative: bool,
}

pub fn envelope_fit(rows: &[VarianceRow]) -> Result<EnvelopeFit> {
    if rows.len() < 2 {
        return Err(Error::config("envelope fit needs at least two scales"));
    }
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| (r.n as f64).powi(-(r.d as i32)))
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::config("envelope fit needs distinct N"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    Ok(EnvelopeFit {
        constant: a,
        coefficient: b,
        nonnegative: a >= 0.0 && b >= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleRow {
    pub d: usize,
    pub lambda: f64,
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub mart_mean: f64,
    pub mart_var: f64,
    pub predicted_qv: f64,
    pub realized_qv: f64,
    pub z_mean: f64,
}

pub fn martingale_rows(cfg: &ExperimentConfig, cells: &[Cell]) -> Vec<MartingaleRow> {
    cells
        .iter()
        .map(|c| {
            let m = Summary::of(c.replicas.iter().map(|r| r.martingale));
            let q = Summary::of(c.replicas.iter().map(|r| r.predicted_qv));
            let rq = Summary::of(c.replicas.iter().map(|r| r.realized_qv));
            MartingaleRow {
                d: cfg.dim,
                lambda: cfg.lambda,
                n: c.n,
                t: c.t,
                replicas: m.count,
                mart_mean: m.mean,
                mart_var: m.variance,
                predicted_qv: q.mean,
                realized_qv: rq.mean,
                z_mean: m.z(0.0),
            }
        })
        .collect()
}

pub fn martingale_diagnostics(cfg: &ExperimentConfig) -> Result<Vec<MartingaleRow>> {
    let cells = run_cells(cfg)?;
    Ok(martingale_rows(cfg, &cells))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::domain(
            "log-log slope needs at least two positive pairs",
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassRow {
    pub d: usize,
    pub lambda: f64,
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub mean_mass: f64,
    pub initial_mass: f64,
    pub se: f64,
    pub z: f64,
}

pub fn mass_rows(cfg: &ExperimentConfig, cells: &[Cell]) -> Vec<MassRow> {
    cells
        .iter()
        .map(|c| {
            let s = Summary::of(c.replicas.iter().map(|r| r.mass));
            let initial = c.replicas[0].initial_mass;
            MassRow {
                d: cfg.dim,
                lambda: cfg.lambda,
                n: c.n,
                t: c.t,
                replicas: s.count,
                mean_mass: s.mean,
                initial_mass: initial,
                se: s.se,
                z: s.z(initial),
            }
        })
        .collect()
}

pub fn mass_conservation_check(cfg: &ExperimentConfig) -> Result<Vec<MassRow>> {
    let cells = run_cells(cfg)?;
    Ok(mass_rows(cfg, &cells))
}

/// Pairing means on the tori of side `L` and `2L`, driven by common events.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublingRow {
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub side: usize,
    pub mean_small: f64,
    pub se_small: f64,
    pub mean_large: f64,
    /// Mean and SE of the per-replica difference large − small.
    pub mean_shift: f64,
    pub se_shift: f64,
}

pub fn l_doubling_control(cfg: &ExperimentConfig, n: usize, t: f64) -> Result<DoublingRow> {
    cfg.validate()?;
    let small_w = ScaleWeights::new(cfg, n)?;
    let large_geom = TorusGeometry::new(cfg.dim, 2 * cfg.side(n))?;
    let large_pairing: Vec<f64> = {
        let nd = (n as f64).powi(cfg.dim as i32);
        site_weights(&large_geom, n, |u| cfg.test_fn.eval(u))
            .into_iter()
            .map(|v| v / nd)
            .collect()
    };
    let pairs = with_pool(cfg.workers, || {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| -> Result<(f64, f64)> {
                let seed = seeding::derive_seed(cfg.master_seed, &[n as u64, u64::MAX, r as u64]);
                let big = init_process(&large_geom, cfg.lambda, &cfg.profile, n, seed)?;
                let small = init_process(&small_w.geom, cfg.lambda, &cfg.profile, n, seed)?;
                let mut c = CoupledTori::new(big, small)?;
                c.advance(t * (n * n) as f64)?;
                Ok((
                    c.small().pair_with_weights(&small_w.pairing),
                    c.big().pair_with_weights(&large_pairing),
                ))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let small = Summary::of(pairs.iter().map(|p| p.0));
    let large = Summary::of(pairs.iter().map(|p| p.1));
    let shift = Summary::of(pairs.iter().map(|p| p.1 - p.0));
    Ok(DoublingRow {
        n,
        t,
        replicas: cfg.replicas,
        side: cfg.side(n),
        mean_small: small.mean,
        se_small: small.se,
        mean_large: large.mean,
        mean_shift: shift.mean,
        se_shift: shift.se,
    })
}
