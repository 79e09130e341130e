//! Exact event-driven simulation of the binary contact path process on a torus.
//!
//! Every site carries a rate-1 death clock and `2d` directed infection clocks
//! of rate `λ`. Between events all sites grow by the common factor
//! `exp((1 - 2λd) s)`, so the state is stored as drift-free values `zeta`
//! together with a single global exponent; an infection `zeta(x) += zeta(y)`
//! is then exact because both operands share the factor.
//!
//! The clocks are simulated with the direct method: the total rate is the
//! constant `n_sites (1 + 2dλ)`, a uniform site is picked at each event, and
//! the event is a death with probability `1 / (1 + 2dλ)`. Sites that are
//! already zero keep ringing; their events are no-ops.

pub mod profile;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::scalar::Real;
use crate::seeding;

pub use profile::{DensityProfile, TestFunction};

/// Configuration `η_t` as drift-free values plus a global log-scale.
///
/// The physical value is `η(x) = zeta(x) · exp(drift_exponent + zeta_exponent)`
/// with `drift_exponent = (1 - 2λd) · micro_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledField<T> {
    zeta: Vec<T>,
    drift_exponent: T,
    zeta_exponent: T,
    micro_time: T,
}

impl<T: Real> ScaledField<T> {
    fn new(zeta: Vec<T>) -> Self {
        ScaledField {
            zeta,
            drift_exponent: T::zero(),
            zeta_exponent: T::zero(),
            micro_time: T::zero(),
        }
    }

    pub fn zeta(&self) -> &[T] {
        &self.zeta
    }

    pub fn drift_exponent(&self) -> T {
        self.drift_exponent
    }

    /// Accumulated `ln` of the overflow rescalings.
    pub fn zeta_exponent(&self) -> T {
        self.zeta_exponent
    }

    pub fn micro_time(&self) -> T {
        self.micro_time
    }

    /// Natural log of the factor converting `zeta` into `η`.
    pub fn log_scale(&self) -> T {
        self.drift_exponent + self.zeta_exponent
    }

    pub fn value(&self, site: usize) -> T {
        let z = self.zeta[site];
        if z == T::zero() {
            T::zero()
        } else {
            z * self.log_scale().exp()
        }
    }

    pub fn values(&self) -> Vec<T> {
        let s = self.log_scale().exp();
        self.zeta
            .iter()
            .map(|&z| if z == T::zero() { z } else { z * s })
            .collect()
    }
}

/// `∫₀^dt exp(e0 + rate · s) ds`, exact including the `rate → 0` limit.
pub fn exp_integral<T: Real>(e0: T, rate: T, dt: T) -> T {
    let x = rate * dt;
    if x.abs() < T::of(1e-300).max(T::min_positive_value()) {
        return e0.exp() * dt;
    }
    e0.exp() * x.exp_m1() / rate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Death,
    /// `zeta(site) += zeta(source)` with `source` a neighbor of `site`.
    Infection {
        source: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub site: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub deaths: u64,
    pub infections: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.deaths + self.infections
    }
}

/// Hooks for accumulating path functionals during [`ProcessState::advance_observed`].
///
/// `on_interval` is called with the field as it stands at the start of an
/// event-free stretch of length `dt`; during the stretch every `η(x)` equals
/// `zeta(x) · exp(log_scale + (1 - 2λd) s)`.
pub trait PathObserver<T> {
    fn on_interval(&mut self, _field: &ScaledField<T>, _dt: T) {}
    /// Called after `zeta(event.site)` changed from `old` to `new`.
    fn on_event(&mut self, _event: &Event, _old: T, _new: T) {}
    /// Called after every `zeta` value was multiplied by `factor`.
    fn on_rescale(&mut self, _factor: T) {}
}

impl<T> PathObserver<T> for () {}

/// Records every event, for replay checks.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub rescales: usize,
}

impl<T> PathObserver<T> for EventLog {
    fn on_event(&mut self, event: &Event, _old: T, _new: T) {
        self.events.push(*event);
    }

    fn on_rescale(&mut self, _factor: T) {
        self.rescales += 1;
    }
}

/// A running BCPP: field, rates, geometry and the generator state.
#[derive(Debug, Clone)]
pub struct ProcessState<T> {
    field: ScaledField<T>,
    lambda: T,
    kappa: T,
    geom: TorusGeometry,
    rng: ChaCha8Rng,
    counts: EventCounts,
    total_rate: f64,
    death_prob: f64,
    next_event_in: T,
}

impl<T: Real> ProcessState<T> {
    /// Starts the process from explicit site values.
    pub fn from_values(geom: TorusGeometry, lambda: T, values: Vec<T>, seed: u64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= T::zero()) {
            return Err(Error::config(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if values.len() != geom.n_sites() {
            return Err(Error::config(format!(
                "{} initial values for {} sites",
                values.len(),
                geom.n_sites()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::config(format!(
                "initial values must be finite and nonnegative, got {v}"
            )));
        }
        let d = T::of_usize(geom.dim());
        let lam = lambda.as_f64();
        let branching = 1.0 + 2.0 * geom.dim() as f64 * lam;
        let mut rng = seeding::stream_rng(seed, &[]);
        let total_rate = geom.n_sites() as f64 * branching;
        let next_event_in = T::of(sample_exp(&mut rng, total_rate));
        Ok(ProcessState {
            field: ScaledField::new(values),
            lambda,
            kappa: T::one() - T::of(2.0) * lambda * d,
            geom,
            rng,
            counts: EventCounts::default(),
            total_rate,
            death_prob: 1.0 / branching,
            next_event_in,
        })
    }

    pub fn field(&self) -> &ScaledField<T> {
        &self.field
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    /// Drift rate `1 - 2λd`.
    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn event_counts(&self) -> EventCounts {
        self.counts
    }

    /// Total event rate `n_sites (1 + 2dλ)`.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Remaining micro time until the next event.
    pub fn time_to_next_event(&self) -> T {
        self.next_event_in
    }

    pub fn advance(&mut self, dt_micro: T) -> Result<()> {
        self.advance_observed(dt_micro, &mut ())
    }

    /// Evolves the process over `dt_micro` units of microscopic time.
    pub fn advance_observed<O: PathObserver<T>>(&mut self, dt_micro: T, obs: &mut O) -> Result<()> {
        if !(dt_micro.is_finite() && dt_micro >= T::zero()) {
            return Err(Error::domain(format!(
                "advance needs a finite dt >= 0, got {dt_micro}"
            )));
        }
        let mut remaining = dt_micro;
        loop {
            if self.next_event_in > remaining {
                self.next_event_in = self.next_event_in - remaining;
                self.drift(remaining, obs);
                return Ok(());
            }
            let step = self.next_event_in;
            remaining = remaining - step;
            self.drift(step, obs);
            self.fire(obs);
            self.next_event_in = T::of(sample_exp(&mut self.rng, self.total_rate));
        }
    }

    fn drift<O: PathObserver<T>>(&mut self, dt: T, obs: &mut O) {
        if dt > T::zero() {
            obs.on_interval(&self.field, dt);
        }
        self.field.micro_time = self.field.micro_time + dt;
        self.field.drift_exponent = self.kappa * self.field.micro_time;
    }

    fn fire<O: PathObserver<T>>(&mut self, obs: &mut O) {
        let (site, u) = self.draw();
        self.apply(site, u, obs);
    }

    /// Uniform site and the uniform deciding the event type and direction.
    fn draw(&mut self) -> (usize, f64) {
        let site = self.rng.random_range(0..self.geom.n_sites());
        (site, self.rng.random())
    }

    fn apply<O: PathObserver<T>>(&mut self, site: usize, u: f64, obs: &mut O) {
        let old = self.field.zeta[site];
        let event = if u < self.death_prob {
            self.field.zeta[site] = T::zero();
            self.counts.deaths += 1;
            Event {
                site,
                kind: EventKind::Death,
            }
        } else {
            let deg = self.geom.degree();
            let dir = (((u - self.death_prob) / (1.0 - self.death_prob)) * deg as f64) as usize;
            let source = self.geom.neighbor(site, dir.min(deg - 1));
            self.field.zeta[site] = old + self.field.zeta[source];
            self.counts.infections += 1;
            Event {
                site,
                kind: EventKind::Infection { source },
            }
        };
        let new = self.field.zeta[site];
        obs.on_event(&event, old, new);
        if new.as_f64() > T::RENORM_THRESHOLD {
            self.renormalize(obs);
        }
    }

    fn renormalize<O: PathObserver<T>>(&mut self, obs: &mut O) {
        let factor = T::of(10f64.powf(-T::RENORM_LOG10));
        for z in &mut self.field.zeta {
            *z = *z * factor;
        }
        self.field.zeta_exponent =
            self.field.zeta_exponent + T::of(T::RENORM_LOG10 * std::f64::consts::LN_10);
        obs.on_rescale(factor);
    }

    /// Physical values `η(x)`.
    pub fn field_values(&self) -> Vec<T> {
        self.field.values()
    }

    /// `Σ_x η(x)`.
    pub fn total_mass(&self) -> T {
        let s: T = self.field.zeta.iter().copied().sum();
        if s == T::zero() {
            s
        } else {
            s * self.field.log_scale().exp()
        }
    }

    /// `⟨π^N, G⟩ = N^{-d} Σ_x η(x) G(x/N)` over the centered torus window.
    pub fn pair_with_empirical_measure(&self, g: &TestFunction<T>, n_scale: usize) -> T {
        let weights = site_weights(&self.geom, n_scale, |u| g.eval(u));
        self.pair_with_weights(&weights) / T::of_usize(n_scale).powi(self.geom.dim() as i32)
    }

    /// `Σ_x η(x) w(x)`.
    pub fn pair_with_weights(&self, weights: &[T]) -> T {
        let s: T = self
            .field
            .zeta
            .iter()
            .zip(weights)
            .map(|(&z, &w)| z * w)
            .sum();
        if s == T::zero() {
            s
        } else {
            s * self.field.log_scale().exp()
        }
    }

    /// Contact-process projection `ξ(x) = 1{η(x) > 0}`.
    pub fn project_contact(&self) -> Vec<bool> {
        self.field.zeta.iter().map(|&z| z > T::zero()).collect()
    }
}

/// A process on the torus of side `2L` driving a copy on the torus of side `L`.
///
/// The small torus is identified with the central block of the large one.
/// Every event of the large process at a block site is replayed on the small
/// process at the same site, infections taking their source through the
/// small torus's own (wrapped) neighbor in the same direction. Block events
/// arrive at rate `L^d (1 + 2dλ)` with uniform sites, so the small process
/// has its own law while sharing randomness with the large one.
#[derive(Debug, Clone)]
pub struct CoupledTori<T> {
    big: ProcessState<T>,
    small: ProcessState<T>,
    block: Vec<Option<usize>>,
}

impl<T: Real> CoupledTori<T> {
    pub fn new(big: ProcessState<T>, small: ProcessState<T>) -> Result<Self> {
        let (gb, gs) = (&big.geom, &small.geom);
        if gb.dim() != gs.dim() || gb.side() != 2 * gs.side() {
            return Err(Error::config(
                "coupled tori need equal dimension and side ratio 2",
            ));
        }
        if big.lambda != small.lambda {
            return Err(Error::config("coupled tori need equal lambda"));
        }
        let mut coord = vec![0i64; gb.dim()];
        let block = (0..gb.n_sites())
            .map(|x| {
                gb.coord_into(x, &mut coord);
                if coord
                    .iter()
                    .all(|&c| c >= gs.min_centered() && c <= gs.max_centered())
                {
                    gs.site_index(&coord).ok()
                } else {
                    None
                }
            })
            .collect();
        Ok(CoupledTori { big, small, block })
    }

    pub fn big(&self) -> &ProcessState<T> {
        &self.big
    }

    pub fn small(&self) -> &ProcessState<T> {
        &self.small
    }

    pub fn advance(&mut self, dt_micro: T) -> Result<()> {
        if !(dt_micro.is_finite() && dt_micro >= T::zero()) {
            return Err(Error::domain(format!(
                "advance needs a finite dt >= 0, got {dt_micro}"
            )));
        }
        let mut remaining = dt_micro;
        loop {
            if self.big.next_event_in > remaining {
                self.big.next_event_in = self.big.next_event_in - remaining;
                self.big.drift(remaining, &mut ());
                self.small.drift(remaining, &mut ());
                return Ok(());
            }
            let step = self.big.next_event_in;
            remaining = remaining - step;
            self.big.drift(step, &mut ());
            self.small.drift(step, &mut ());
            let (site, u) = self.big.draw();
            self.big.apply(site, u, &mut ());
            if let Some(s) = self.block[site] {
                self.small.apply(s, u, &mut ());
            }
            self.big.next_event_in = T::of(sample_exp(&mut self.big.rng, self.big.total_rate));
        }
    }
}

/// `f(x / N)` at every site, using centered coordinates.
pub fn site_weights<T: Real, F: Fn(&[T]) -> T>(
    geom: &TorusGeometry,
    n_scale: usize,
    f: F,
) -> Vec<T> {
    let inv = T::one() / T::of_usize(n_scale);
    let mut coord = vec![0i64; geom.dim()];
    let mut u = vec![T::zero(); geom.dim()];
    (0..geom.n_sites())
        .map(|x| {
            geom.coord_into(x, &mut coord);
            for (ui, &c) in u.iter_mut().zip(&coord) {
                *ui = T::of(c as f64) * inv;
            }
            f(&u)
        })
        .collect()
}

/// Starts the process from `η₀(x) = ρ₀(x / N)`.
pub fn init_process<T: Real>(
    geom: &TorusGeometry,
    lambda: T,
    profile: &DensityProfile<T>,
    n_scale: usize,
    seed: u64,
) -> Result<ProcessState<T>> {
    if n_scale == 0 {
        return Err(Error::config("scale N must be at least 1"));
    }
    if profile.dim() != geom.dim() {
        return Err(Error::config(format!(
            "profile has dimension {}, torus has dimension {}",
            profile.dim(),
            geom.dim()
        )));
    }
    check_window(geom, n_scale, profile.support_radius(), "initial profile")?;
    let values = site_weights(geom, n_scale, |u| profile.eval(u));
    ProcessState::from_values(geom.clone(), lambda, values, seed)
}

/// Fails unless `N · radius` fits in the torus half-width `L / 2`.
pub fn check_window<T: Real>(
    geom: &TorusGeometry,
    n_scale: usize,
    radius: T,
    what: &str,
) -> Result<()> {
    let reach = radius.as_f64() * n_scale as f64;
    let half = geom.side() as f64 / 2.0;
    if reach > half + 1e-9 {
        return Err(Error::config(format!(
            "{what} support radius {radius} scaled by N = {n_scale} reaches {reach}, beyond the torus half-width {half}"
        )));
    }
    Ok(())
}

/// Replica mean and standard error of a vector-valued path functional.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaMoments {
    pub replicas: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// Replicas per accumulation block; blocks merge in index order.
const REPLICA_BLOCK: usize = 64;

/// Evaluates `f(seed, out)` for `replicas` seeds derived from `master_seed`
/// and returns componentwise means and standard errors.
///
/// Blocks of replicas run in parallel and merge in a fixed order, so the
/// result does not depend on the thread count.
pub fn replicate_functional<F>(
    replicas: usize,
    master_seed: u64,
    width: usize,
    f: F,
) -> Result<ReplicaMoments>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    if replicas < 2 {
        return Err(Error::config(format!(
            "need at least 2 replicas, got {replicas}"
        )));
    }
    let blocks: Vec<(usize, Vec<f64>, Vec<f64>)> = (0..replicas.div_ceil(REPLICA_BLOCK))
        .into_par_iter()
        .map(|b| -> Result<(usize, Vec<f64>, Vec<f64>)> {
            let (lo, hi) = (b * REPLICA_BLOCK, ((b + 1) * REPLICA_BLOCK).min(replicas));
            let mut mean = vec![0.0; width];
            let mut m2 = vec![0.0; width];
            let mut out = vec![0.0; width];
            for (k, r) in (lo..hi).enumerate() {
                f(seeding::derive_seed(master_seed, &[r as u64]), &mut out)
                    .map_err(|e| e.context(format!("replica {r}")))?;
                let n = (k + 1) as f64;
                for i in 0..width {
                    let delta = out[i] - mean[i];
                    mean[i] += delta / n;
                    m2[i] += delta * (out[i] - mean[i]);
                }
            }
            Ok((hi - lo, mean, m2))
        })
        .collect::<Result<_>>()?;
    let mut count = 0usize;
    let mut mean = vec![0.0; width];
    let mut m2 = vec![0.0; width];
    for (nb, bm, bm2) in blocks {
        let (na, nbf) = (count as f64, nb as f64);
        let tot = na + nbf;
        for i in 0..width {
            let delta = bm[i] - mean[i];
            mean[i] += delta * nbf / tot;
            m2[i] += bm2[i] + delta * delta * na * nbf / tot;
        }
        count += nb;
    }
    let n = count as f64;
    let se = m2.iter().map(|v| (v / (n - 1.0) / n).sqrt()).collect();
    Ok(ReplicaMoments {
        replicas: count,
        mean,
        se,
    })
}

/// Monte Carlo estimate of `E η_t(x)` at every site.
pub fn mc_site_means(
    geom: &TorusGeometry,
    lambda: f64,
    initial: &[f64],
    t_micro: f64,
    replicas: usize,
    master_seed: u64,
) -> Result<ReplicaMoments> {
    replicate_functional(replicas, master_seed, geom.n_sites(), |seed, out| {
        let mut p = ProcessState::from_values(geom.clone(), lambda, initial.to_vec(), seed)?;
        p.advance(t_micro)?;
        out.copy_from_slice(&p.field_values());
        Ok(())
    })
}

fn sample_exp(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(d: usize, l: usize) -> TorusGeometry {
        TorusGeometry::new(d, l).unwrap()
    }

    #[test]
    fn zero_field_is_absorbing() {
        let g = geom(2, 5);
        let mut p = ProcessState::from_values(g, 0.7f64, vec![0.0; 25], 3).unwrap();
        p.advance(4.0).unwrap();
        assert!(p.field_values().iter().all(|&v| v == 0.0));
        assert_eq!(p.total_mass(), 0.0);
        assert!(p.project_contact().iter().all(|&b| !b));
        assert!(p.event_counts().total() > 0);
    }

    #[test]
    fn init_samples_profile() {
        let g = geom(2, 21);
        let zero = DensityProfile::constant_bump(vec![0.0, 0.0], 1.0, 0.0).unwrap();
        let p = init_process(&g, 0.5, &zero, 1, 1).unwrap();
        assert!(p.field_values().iter().all(|&v| v == 0.0));

        let bump = DensityProfile::constant_bump(vec![0.0, 0.0], 3.0, 2.0).unwrap();
        let p = init_process(&g, 0.5, &bump, 1, 1).unwrap();
        for x in 0..g.n_sites() {
            let c = g.coord_of_index(x);
            let expect = if c.linf() <= 3 { 2.0 } else { 0.0 };
            assert_eq!(p.field_values()[x], expect);
            assert_eq!(p.project_contact()[x], expect > 0.0);
        }

        let gauss = DensityProfile::gaussian_bump(vec![0.1, -0.2], 0.3, 1.5).unwrap();
        let g = geom(2, 40);
        let p = init_process(&g, 0.5, &gauss, 8, 1).unwrap();
        for x in 0..g.n_sites() {
            let c = g.coord_of_index(x);
            let u = [
                c.components()[0] as f64 / 8.0,
                c.components()[1] as f64 / 8.0,
            ];
            assert_eq!(p.field_values()[x], gauss.eval(&u));
        }
        assert_eq!(p.field().drift_exponent(), 0.0);
        assert_eq!(p.field().micro_time(), 0.0);
    }

    #[test]
    fn init_rejects_profile_outside_window() {
        let g = geom(1, 16);
        let bump = DensityProfile::constant_bump(vec![0.0], 1.0, 1.0).unwrap();
        assert!(init_process(&g, 0.5, &bump, 8, 1).is_ok());
        assert!(matches!(
            init_process(&g, 0.5, &bump, 9, 1),
            Err(Error::Config(_))
        ));
        assert!(init_process(&g, 0.5, &bump, 0, 1).is_err());
        let bump2 = DensityProfile::constant_bump(vec![0.0, 0.0], 1.0, 1.0).unwrap();
        assert!(init_process(&g, 0.5, &bump2, 1, 1).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut p =
                ProcessState::from_values(geom(1, 5), 0.5f64, vec![1.0, 2.0, 0.5, 0.0, 3.0], 11)
                    .unwrap();
            p.advance(1.0).unwrap();
            (p.field_values(), p.event_counts())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn event_free_stretch_is_pure_drift() {
        let init = vec![1.0, 2.0, 0.5, 0.0, 3.0];
        let mut p = ProcessState::from_values(geom(1, 5), 0.4f64, init.clone(), 5).unwrap();
        let wait = p.time_to_next_event();
        let t1 = wait * 0.3;
        let t2 = wait * 0.5;
        p.advance(t1).unwrap();
        p.advance(t2).unwrap();
        assert_eq!(p.event_counts().total(), 0);
        let kappa = 1.0 - 2.0 * 0.4;
        let mut q = ProcessState::from_values(geom(1, 5), 0.4f64, init.clone(), 5).unwrap();
        q.advance(t1 + t2).unwrap();
        for ((a, b), x0) in p.field_values().iter().zip(q.field_values()).zip(&init) {
            let expect = x0 * (kappa * (t1 + t2)).exp();
            assert!((a - expect).abs() <= 1e-14 * expect.max(1.0));
            assert!((b - expect).abs() <= 1e-14 * expect.max(1.0));
        }
    }

    #[test]
    fn drift_exponent_tracks_time() {
        let mut p = ProcessState::from_values(geom(2, 4), 0.6f64, vec![1.0; 16], 2).unwrap();
        p.advance(0.37).unwrap();
        p.advance(1.2).unwrap();
        let f = p.field();
        assert!((f.drift_exponent() - (1.0 - 2.4) * f.micro_time()).abs() < 1e-14);
        assert!((f.micro_time() - 1.57).abs() < 1e-14);
        assert!(f.zeta().iter().all(|&z| z >= 0.0 && z.is_finite()));
    }

    #[test]
    fn event_log_replays_to_final_state() {
        let g = geom(2, 4);
        let init: Vec<f64> = (0..16).map(|i| (i % 5) as f64 * 0.25).collect();
        let mut p = ProcessState::from_values(g.clone(), 0.8, init.clone(), 9).unwrap();
        let mut log = EventLog::default();
        p.advance_observed(3.0, &mut log).unwrap();
        assert_eq!(log.rescales, 0);
        let mut zeta = init;
        for e in &log.events {
            match e.kind {
                EventKind::Death => zeta[e.site] = 0.0,
                EventKind::Infection { source } => {
                    assert!(g.neighbors(e.site).unwrap().contains(&source));
                    zeta[e.site] += zeta[source];
                }
            }
        }
        assert_eq!(zeta.as_slice(), p.field().zeta());
        let c = p.event_counts();
        assert_eq!(c.total() as usize, log.events.len());
    }

    #[test]
    fn contact_projection_matches_positivity() {
        let g = geom(2, 6);
        let bump = DensityProfile::smooth_box(vec![0.0, 0.0], 1.0, 0.5, 1.0).unwrap();
        let mut p = init_process(&g, 0.9, &bump, 2, 4).unwrap();
        p.advance(2.5).unwrap();
        let xi = p.project_contact();
        for (x, v) in p.field_values().iter().enumerate() {
            assert_eq!(xi[x], *v > 0.0);
        }
    }

    #[test]
    fn pairing_reduces_to_mass_for_flat_weight() {
        let g = geom(2, 12);
        let bump = DensityProfile::constant_bump(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let p = init_process(&g, 0.5f64, &bump, 4, 1).unwrap();
        let ones = vec![1.0; g.n_sites()];
        assert!((p.pair_with_weights(&ones) - p.total_mass()).abs() < 1e-12);
        let gfun = TestFunction::polynomial_bump(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let direct: f64 = (0..g.n_sites())
            .map(|x| {
                let c = g.coord_of_index(x);
                let u = [
                    c.components()[0] as f64 / 4.0,
                    c.components()[1] as f64 / 4.0,
                ];
                bump.eval(&u) * gfun.eval(&u)
            })
            .sum::<f64>()
            / 16.0;
        assert!((p.pair_with_empirical_measure(&gfun, 4) - direct).abs() < 1e-14);
        let empty = ProcessState::from_values(g.clone(), 0.5, vec![0.0; g.n_sites()], 1).unwrap();
        assert_eq!(empty.pair_with_empirical_measure(&gfun, 4), 0.0);
    }

    #[test]
    fn rescale_guard_preserves_values() {
        let g = geom(1, 3);
        let mut p = ProcessState::from_values(g, 1.0f64, vec![9e199, 9e199, 9e199], 1).unwrap();
        let mut log = EventLog::default();
        // run until a rescale happens
        for _ in 0..200 {
            p.advance_observed(0.05, &mut log).unwrap();
            if log.rescales > 0 {
                break;
            }
        }
        assert!(log.rescales > 0);
        let f = p.field();
        assert!(f.zeta().iter().all(|&z| z <= 1e200));
        assert!(
            (f.zeta_exponent() - log.rescales as f64 * 100.0 * std::f64::consts::LN_10).abs()
                < 1e-9
        );
        assert!(p.total_mass().is_finite() || f.log_scale() > 700.0);
    }

    #[test]
    fn exp_integral_limits() {
        assert!((exp_integral(0.3f64, 0.0, 2.0) - 2.0 * 0.3f64.exp()).abs() < 1e-15);
        let v = exp_integral(0.1f64, -1.7, 0.8);
        let expect = 0.1f64.exp() * (1.0 - (-1.7f64 * 0.8).exp()) / 1.7;
        assert!((v - expect).abs() < 1e-15);
    }

    #[test]
    fn single_precision_instantiation_runs() {
        let g = geom(2, 5);
        let mut p = ProcessState::from_values(g, 0.5f32, vec![1.0; 25], 8).unwrap();
        p.advance(1.0).unwrap();
        assert!(p.total_mass().is_finite());
    }

    #[test]
    fn coupled_small_torus_matches_block_when_mass_stays_inside() {
        let big_g = geom(2, 24);
        let small_g = geom(2, 12);
        let bump = DensityProfile::constant_bump(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let big = init_process(&big_g, 0.4f64, &bump, 2, 9).unwrap();
        let small = init_process(&small_g, 0.4f64, &bump, 2, 123).unwrap();
        let mut c = CoupledTori::new(big, small).unwrap();
        c.advance(0.5).unwrap();
        let (b, s) = (c.big(), c.small());
        assert_eq!(b.field().micro_time(), s.field().micro_time());
        // block copies agree exactly while nothing crossed the block boundary
        let mut coord = vec![0i64; 2];
        for x in 0..small_g.n_sites() {
            small_g.coord_into(x, &mut coord);
            let y = big_g.site_index(&coord).unwrap();
            assert_eq!(b.field().value(y), s.field().value(x));
        }
        assert!(s.event_counts().total() > 0);
        assert!(s.event_counts().total() < b.event_counts().total());
        assert!(CoupledTori::new(b.clone(), b.clone()).is_err());
    }

    #[test]
    fn replica_blocks_merge_like_two_pass_and_ignore_threads() {
        let vals = |seed: u64| [(seed % 97) as f64, (seed % 13) as f64 * 0.5];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    replicate_functional(300, 5, 2, |seed, out| {
                        out.copy_from_slice(&vals(seed));
                        Ok(())
                    })
                    .unwrap()
                })
        };
        let a = run(1);
        assert_eq!(a, run(4));
        let xs: Vec<[f64; 2]> = (0..300u64)
            .map(|r| vals(seeding::derive_seed(5, &[r])))
            .collect();
        for i in 0..2 {
            let m = xs.iter().map(|x| x[i]).sum::<f64>() / 300.0;
            let v = xs.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / 299.0;
            assert!((a.mean[i] - m).abs() < 1e-12);
            assert!((a.se[i] - (v / 300.0).sqrt()).abs() < 1e-12);
        }
        assert!(replicate_functional(1, 5, 1, |_, _| Ok(())).is_err());
    }

    #[test]
    fn site_means_match_the_drift_at_zero_lambda() {
        let g = geom(1, 6);
        let init = vec![1.0, 2.0, 0.0, 0.5, 3.0, 1.0];
        let m = mc_site_means(&g, 0.0, &init, 0.4, 4000, 9).unwrap();
        for (i, &v) in init.iter().enumerate() {
            let exact = v * 0.4f64.exp() * (-0.4f64).exp();
            let z = if m.se[i] > 0.0 {
                (m.mean[i] - exact) / m.se[i]
            } else {
                m.mean[i] - exact
            };
            assert!(z.abs() < 4.5, "site {i}: {} vs {exact}", m.mean[i]);
        }
    }
}
