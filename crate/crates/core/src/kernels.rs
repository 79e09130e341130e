//! Transition kernels of the rate-`λ` simple random walk on the torus, the
//! return probabilities `k(x)` of the discrete walk on `Z^d`, the escape
//! probability `γ_d`, and the constants derived from it.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{CenteredBall, TorusGeometry};
use crate::linalg::CsrMatrix;
use crate::scalar::Real;
use crate::seeding;

/// Kernel entries in `[-CLAMP, 0)` are rounding noise and are set to zero.
const CLAMP: f64 = 1e-14;

/// Transition probabilities of the rate-`λ` walk on the cycle `Z/LZ` after time `t`.
///
/// Uses the cosine expansion `p_t(j) = L^{-1} Σ_m exp(2λt(cos(2πm/L) - 1)) cos(2πmj/L)`.
pub fn cycle_kernel<T: Real>(t: T, side: usize, lambda: T) -> Result<Vec<T>> {
    if !(t.is_finite() && t >= T::zero()) {
        return Err(Error::domain(format!(
            "kernel time must be finite and >= 0, got {t}"
        )));
    }
    if side < 3 {
        return Err(Error::config(format!(
            "cycle length {side} violates L >= 3"
        )));
    }
    if !(lambda.is_finite() && lambda > T::zero()) {
        return Err(Error::domain(format!(
            "walk rate must be positive, got {lambda}"
        )));
    }
    let l = side;
    let cos_table: Vec<T> = (0..l)
        .map(|k| (T::of(2.0) * T::PI() * T::of_usize(k) / T::of_usize(l)).cos())
        .collect();
    let two_lt = T::of(2.0) * lambda * t;
    let modes: Vec<T> = cos_table
        .iter()
        .map(|&c| (two_lt * (c - T::one())).exp())
        .collect();
    let inv_l = T::one() / T::of_usize(l);
    let clamp = T::of(CLAMP).max(T::epsilon() * T::of(64.0));
    let mut p = Vec::with_capacity(l);
    for j in 0..l {
        let mut acc = T::zero();
        for (m, &w) in modes.iter().enumerate() {
            acc = acc + w * cos_table[(m * j) % l];
        }
        let v = acc * inv_l;
        if v < -clamp {
            return Err(Error::numeric(format!(
                "cycle kernel entry {j} is {v}, below the rounding clamp"
            )));
        }
        p.push(v.max(T::zero()));
    }
    let total: T = p.iter().copied().sum();
    for v in &mut p {
        *v = *v / total;
    }
    Ok(p)
}

/// Product-form kernel `p_t(x, y)` of the rate-`λ` walk on a torus.
#[derive(Debug, Clone)]
pub struct KernelTable<T> {
    t: T,
    lambda: T,
    geom: TorusGeometry,
    one_dim: Vec<T>,
}

impl<T: Real> KernelTable<T> {
    pub fn new(t: T, lambda: T, geom: &TorusGeometry) -> Result<Self> {
        Ok(KernelTable {
            t,
            lambda,
            geom: geom.clone(),
            one_dim: cycle_kernel(t, geom.side(), lambda)?,
        })
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    /// The cycle kernel shared by every coordinate.
    pub fn one_dim(&self) -> &[T] {
        &self.one_dim
    }

    pub fn prob(&self, x: usize, y: usize) -> T {
        (0..self.geom.dim())
            .map(|axis| self.one_dim[self.geom.displacement_residue(x, y, axis)])
            .fold(T::one(), |a, b| a * b)
    }

    /// Probability of the displacement `disp` (taken modulo `L`).
    pub fn prob_displacement(&self, disp: &[i64]) -> T {
        let l = self.geom.side() as i64;
        disp.iter()
            .map(|&c| self.one_dim[c.rem_euclid(l) as usize])
            .fold(T::one(), |a, b| a * b)
    }
}

/// `p_t(x, y)` on the torus.
pub fn torus_kernel<T: Real>(
    t: T,
    x: usize,
    y: usize,
    geom: &TorusGeometry,
    lambda: T,
) -> Result<T> {
    if x >= geom.n_sites() || y >= geom.n_sites() {
        return Err(Error::config("site index out of range"));
    }
    Ok(KernelTable::new(t, lambda, geom)?.prob(x, y))
}

/// `E η_t(x) = Σ_y p_t(x, y) η₀(y)`, applied one axis at a time.
pub fn first_moment<T: Real>(
    initial: &[T],
    t: T,
    lambda: T,
    geom: &TorusGeometry,
) -> Result<Vec<T>> {
    if initial.len() != geom.n_sites() {
        return Err(Error::config(format!(
            "{} values for {} sites",
            initial.len(),
            geom.n_sites()
        )));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("initial field must be finite"));
    }
    let kernel = cycle_kernel(t, geom.side(), lambda)?;
    Ok(convolve_axes(initial, &kernel, geom))
}

/// Circular convolution with the same 1-d kernel along every axis.
pub(crate) fn convolve_axes<T: Real>(values: &[T], kernel: &[T], geom: &TorusGeometry) -> Vec<T> {
    let l = geom.side();
    let mut cur = values.to_vec();
    let mut next = vec![T::zero(); cur.len()];
    let mut line = vec![T::zero(); l];
    let mut stride = 1usize;
    for _ in 0..geom.dim() {
        let block = stride * l;
        for base in (0..cur.len()).step_by(block) {
            for off in 0..stride {
                for (r, v) in line.iter_mut().enumerate() {
                    *v = cur[base + off + r * stride];
                }
                for r in 0..l {
                    let mut acc = T::zero();
                    for (j, &v) in line.iter().enumerate() {
                        acc = acc + kernel[(r + l - j) % l] * v;
                    }
                    next[base + off + r * stride] = acc;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        stride = block;
    }
    cur
}

/// Q-matrix of the rate-`λ` walk on the torus (`H₂`), for dense oracles.
pub fn walk_generator(geom: &TorusGeometry, lambda: f64) -> Result<CsrMatrix> {
    let deg = geom.degree() as f64;
    let rows = (0..geom.n_sites())
        .map(|x| {
            let mut row = vec![(x, -deg * lambda)];
            row.extend(geom.neighbors(x)?.into_iter().map(|y| (y, lambda)));
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    CsrMatrix::from_rows(rows)
}

/// How a [`ReturnTable`] is computed.
#[derive(Debug, Clone, PartialEq)]
pub enum ReturnMethod {
    /// Dirichlet problem `k = (2d)^{-1} Σ_{y∼x} k(y)` off the origin on the
    /// ball `‖x‖∞ < r_solve` with `k(O) = 1` and `k = 0` from `‖x‖∞ = r_solve`
    /// on. With a companion radius the reported values are the per-site
    /// extrapolation in `1/r` of the two truncated solutions, which is again
    /// harmonic wherever both are.
    LinearSolve {
        r_solve: usize,
        r_companion: Option<usize>,
        tol: f64,
    },
    /// Fraction of discrete walks from `x` that visit the origin within
    /// `horizon` steps, with the `n^{-1/2}` tail removed by pairing the
    /// horizons `horizon / 4` and `horizon`.
    MonteCarlo { walks: u64, horizon: u64 },
}

impl ReturnMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ReturnMethod::LinearSolve { .. } => "linear_solve",
            ReturnMethod::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

/// `k(x)` on the centered ball of radius `R`.
#[derive(Debug, Clone)]
pub struct ReturnTable {
    ball: CenteredBall,
    values: Vec<f64>,
    method: ReturnMethod,
    /// 95% half-widths, Monte Carlo only.
    ci_halfwidth: Option<Vec<f64>>,
}

impl ReturnTable {
    pub fn ball(&self) -> &CenteredBall {
        &self.ball
    }

    pub fn dim(&self) -> usize {
        self.ball.dim()
    }

    pub fn radius(&self) -> usize {
        self.ball.radius()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn method(&self) -> &ReturnMethod {
        &self.method
    }

    pub fn ci_halfwidth(&self) -> Option<&[f64]> {
        self.ci_halfwidth.as_deref()
    }

    pub fn k(&self, coord: &[i64]) -> Option<f64> {
        self.ball.index(coord).map(|i| self.values[i])
    }

    pub fn k_e1(&self) -> Option<f64> {
        self.ball.e1().map(|i| self.values[i])
    }

    /// Largest `|k(x) - (2d)^{-1} Σ_{y∼x} k(y)|` over interior `x ≠ O`.
    pub fn harmonic_residual(&self) -> f64 {
        let d2 = 2.0 * self.dim() as f64;
        let o = self.ball.origin();
        (0..self.ball.len())
            .filter(|&i| i != o && self.ball.is_interior(i))
            .map(|i| {
                let s: f64 = (0..2 * self.dim())
                    .map(|dir| self.values[self.ball.neighbor(i, dir).unwrap()])
                    .sum();
                (self.values[i] - s / d2).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Builds `k(x)` for `‖x‖∞ ≤ radius`.
pub fn return_table(
    dim: usize,
    radius: usize,
    method: ReturnMethod,
    seed: u64,
) -> Result<ReturnTable> {
    if radius < 2 {
        return Err(Error::config(format!(
            "return table radius must be >= 2, got {radius}"
        )));
    }
    let ball = CenteredBall::new(dim, radius)?;
    match method {
        ReturnMethod::LinearSolve {
            r_solve,
            r_companion,
            tol,
        } => {
            if r_solve <= radius {
                return Err(Error::config(format!(
                    "R_solve = {r_solve} must exceed the table radius {radius}"
                )));
            }
            let hi = TruncatedReturn::solve(dim, r_solve, tol)?;
            let values = match r_companion {
                None => (0..ball.len())
                    .map(|i| hi.k(ball.coord(i).components()))
                    .collect(),
                Some(rc) => {
                    // k_rc vanishes on ‖x‖∞ = rc, so rc = radius is admissible
                    if rc < radius || rc == r_solve {
                        return Err(Error::config(format!(
                            "companion radius {rc} must be at least the table radius {radius} and differ from R_solve"
                        )));
                    }
                    let lo = TruncatedReturn::solve(dim, rc, tol)?;
                    (0..ball.len())
                        .map(|i| {
                            let c = ball.coord(i);
                            extrapolate_in_radius(
                                rc,
                                lo.k(c.components()),
                                r_solve,
                                hi.k(c.components()),
                            )
                        })
                        .collect()
                }
            };
            Ok(ReturnTable {
                ball,
                values,
                method,
                ci_halfwidth: None,
            })
        }
        ReturnMethod::MonteCarlo { walks, horizon } => {
            let mut values = Vec::with_capacity(ball.len());
            let mut ci = Vec::with_capacity(ball.len());
            for i in 0..ball.len() {
                let est = mc_return_probability(
                    dim,
                    ball.coord(i).components(),
                    walks,
                    horizon,
                    seeding::derive_seed(seed, &[i as u64]),
                )?;
                values.push(est.corrected.clamp(0.0, 1.0));
                ci.push(1.96 * est.corrected_se);
            }
            Ok(ReturnTable {
                ball,
                values,
                method,
                ci_halfwidth: Some(ci),
            })
        }
    }
}

/// Extrapolates `k_r ≈ k_∞ - c / r` from two truncation radii.
pub fn extrapolate_in_radius(r1: usize, k1: f64, r2: usize, k2: f64) -> f64 {
    let (r1, r2) = (r1 as f64, r2 as f64);
    (r2 * k2 - r1 * k1) / (r2 - r1)
}

/// Solution of the truncated Dirichlet problem for `k` on `‖x‖∞ < r_solve`.
#[derive(Debug, Clone)]
pub struct TruncatedReturn {
    ball: CenteredBall,
    values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl TruncatedReturn {
    /// Conjugate gradients on the `2d`-scaled Laplacian, stopped when the
    /// recomputed residual is below `tol` in max-norm.
    pub fn solve(dim: usize, r_solve: usize, tol: f64) -> Result<Self> {
        if r_solve < 2 {
            return Err(Error::config("R_solve must be at least 2"));
        }
        if !(tol > 0.0) {
            return Err(Error::config("solver tolerance must be positive"));
        }
        let ball = CenteredBall::new(dim, r_solve - 1)?;
        let n = ball.len();
        let o = ball.origin();
        let mut b = vec![0.0; n];
        for dir in 0..2 * dim {
            if let Some(j) = ball.neighbor(o, dir) {
                b[j] = 1.0;
            }
        }
        let width = 2 * (r_solve - 1) + 1;
        let apply = |u: &[f64], out: &mut [f64]| {
            stencil_apply(u, out, dim, width);
            out[o] = 0.0;
        };
        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = dot(&r, &r);
        let max_iter = 50 * n.max(100);
        let mut iterations = 0;
        loop {
            let inf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if inf <= tol {
                // recompute the true residual before accepting
                apply(&x, &mut ap);
                for i in 0..n {
                    r[i] = b[i] - ap[i];
                }
                r[o] = 0.0;
                let true_inf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if true_inf <= tol {
                    let mut values = x;
                    values[o] = 1.0;
                    return Ok(TruncatedReturn {
                        ball,
                        values,
                        iterations,
                        residual: true_inf,
                    });
                }
                p.copy_from_slice(&r);
                rr = dot(&r, &r);
            }
            if iterations >= max_iter {
                return Err(Error::numeric(format!(
                    "conjugate gradients did not reach {tol:e} within {max_iter} iterations (residual {inf:e})"
                )));
            }
            apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            iterations += 1;
        }
    }

    pub fn ball(&self) -> &CenteredBall {
        &self.ball
    }

    /// `k(x)`, zero outside the solved ball.
    pub fn k(&self, coord: &[i64]) -> f64 {
        self.ball.index(coord).map_or(0.0, |i| self.values[i])
    }
}

/// `out = 2d·u - Σ_{neighbors in the box} u`.
fn stencil_apply(u: &[f64], out: &mut [f64], dim: usize, width: usize) {
    let d2 = 2.0 * dim as f64;
    for (o, &v) in out.iter_mut().zip(u) {
        *o = d2 * v;
    }
    let mut stride = 1;
    for _ in 0..dim {
        let block = stride * width;
        for base in (0..u.len()).step_by(block) {
            for r in 0..width {
                let row = base + r * stride;
                if r > 0 {
                    for j in 0..stride {
                        out[row + j] -= u[row + j - stride];
                    }
                }
                if r + 1 < width {
                    for j in 0..stride {
                        out[row + j] -= u[row + j + stride];
                    }
                }
            }
        }
        stride = block;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Monte Carlo estimate of `k(start)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McReturnEstimate {
    pub walks: u64,
    pub horizon: u64,
    /// Fraction of walks visiting the origin within `horizon` steps.
    pub raw: f64,
    pub raw_se: f64,
    /// `2 F(horizon) - F(horizon / 4)`, which cancels the leading
    /// `horizon^{-1/2}` term of the missed-return tail.
    pub corrected: f64,
    pub corrected_se: f64,
}

/// Runs `walks` discrete simple random walks from `start`.
pub fn mc_return_probability(
    dim: usize,
    start: &[i64],
    walks: u64,
    horizon: u64,
    seed: u64,
) -> Result<McReturnEstimate> {
    if start.len() != dim || dim == 0 {
        return Err(Error::config("start point has the wrong dimension"));
    }
    if walks < 2 || horizon < 4 {
        return Err(Error::config(
            "need at least 2 walks and a horizon of at least 4 steps",
        ));
    }
    if start.iter().all(|&c| c == 0) {
        return Ok(McReturnEstimate {
            walks,
            horizon,
            raw: 1.0,
            raw_se: 0.0,
            corrected: 1.0,
            corrected_se: 0.0,
        });
    }
    let quarter = horizon / 4;
    const BLOCK: u64 = 1024;
    let n_blocks = walks.div_ceil(BLOCK);
    // (hit by quarter horizon, hit by full horizon)
    let (early, late) = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let mut early = 0u64;
            let mut late = 0u64;
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(walks);
            let mut pos = vec![0i64; dim];
            for w in lo..hi {
                let mut rng = seeding::stream_rng(seed, &[w]);
                pos.copy_from_slice(start);
                if let Some(hit) = walk_until_origin(&mut pos, horizon, &mut rng) {
                    late += 1;
                    if hit <= quarter {
                        early += 1;
                    }
                }
            }
            (early, late)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = walks as f64;
    let f_full = late as f64 / n;
    let f_quarter = early as f64 / n;
    // score per walk: 2·1{T ≤ H} - 1{T ≤ H/4} ∈ {0, 1, 2}
    let ones = (late - early) as f64 * 2.0 + early as f64;
    let mean = ones / n;
    let second = ((late - early) as f64 * 4.0 + early as f64) / n;
    let var = (second - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(McReturnEstimate {
        walks,
        horizon,
        raw: f_full,
        raw_se: (f_full * (1.0 - f_full) / n).sqrt(),
        corrected: 2.0 * f_full - f_quarter,
        corrected_se: (var / n).sqrt(),
    })
}

/// Steps a simple random walk until it sits on the origin; returns the hit time.
fn walk_until_origin<R: Rng>(pos: &mut [i64], horizon: u64, rng: &mut R) -> Option<u64> {
    let dirs = 2 * pos.len() as u64;
    let bits = 64 - (dirs - 1).leading_zeros();
    let mask = (1u64 << bits) - 1;
    let mut nonzero = pos.iter().filter(|&&c| c != 0).count();
    let mut step = 0u64;
    let mut word = 0u64;
    let mut left = 0u32;
    while step < horizon {
        if left < bits {
            word = rng.next_u64();
            left = 64;
        }
        let dir = word & mask;
        word >>= bits;
        left -= bits;
        if dir >= dirs {
            continue;
        }
        let axis = (dir >> 1) as usize;
        let before = pos[axis];
        let after = if dir & 1 == 0 { before + 1 } else { before - 1 };
        pos[axis] = after;
        if before == 0 {
            nonzero += 1;
        } else if after == 0 {
            nonzero -= 1;
        }
        step += 1;
        if nonzero == 0 {
            return Some(step);
        }
    }
    None
}

/// `γ_d = 1 - k(e₁)`.
pub fn gamma_d(table: &ReturnTable) -> Result<f64> {
    table
        .k_e1()
        .map(|k| 1.0 - k)
        .ok_or_else(|| Error::config("return table does not contain e1"))
}

/// Value of `h_λ` and whether `λ` exceeds the critical bound (so `h_λ > 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HLambda<T> {
    pub value: T,
    pub positive: bool,
}

/// `h_λ = (2λd(2γ - 1) - 1) / (1 + 2dλ)`.
pub fn h_lambda<T: Real>(lambda: T, dim: usize, gamma: T) -> Result<HLambda<T>> {
    if !(gamma > T::of(0.5) && gamma <= T::one()) {
        return Err(Error::domain(format!(
            "h_lambda needs 1/2 < gamma <= 1, got {gamma}"
        )));
    }
    if !(lambda.is_finite() && lambda > T::zero()) {
        return Err(Error::domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let two_d_lambda = T::of(2.0) * T::of_usize(dim) * lambda;
    let value =
        (two_d_lambda * (T::of(2.0) * gamma - T::one()) - T::one()) / (T::one() + two_d_lambda);
    Ok(HLambda {
        value,
        positive: value > T::zero(),
    })
}

/// Upper bound `1 / (2d(2γ - 1))` for the contact-process critical value.
pub fn lambda_critical_bound<T: Real>(dim: usize, gamma: T) -> Result<T> {
    if !(gamma > T::of(0.5) && gamma <= T::one()) {
        return Err(Error::domain(format!(
            "critical bound needs 1/2 < gamma <= 1, got {gamma}"
        )));
    }
    Ok(T::one() / (T::of(2.0) * T::of_usize(dim) * (T::of(2.0) * gamma - T::one())))
}

/// `k(e₁)` from the two-radius linear solve and the resulting `γ_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub dim: usize,
    pub r_lo: usize,
    pub r_hi: usize,
    pub k_e1_lo: f64,
    pub k_e1_hi: f64,
    pub k_e1: f64,
    pub gamma: f64,
}

pub fn estimate_gamma(dim: usize, r_lo: usize, r_hi: usize, tol: f64) -> Result<GammaEstimate> {
    if r_lo >= r_hi {
        return Err(Error::config("need r_lo < r_hi"));
    }
    let e1 = unit_e1(dim);
    let k_lo = TruncatedReturn::solve(dim, r_lo, tol)?.k(&e1);
    let k_hi = TruncatedReturn::solve(dim, r_hi, tol)?.k(&e1);
    let k = extrapolate_in_radius(r_lo, k_lo, r_hi, k_hi);
    Ok(GammaEstimate {
        dim,
        r_lo,
        r_hi,
        k_e1_lo: k_lo,
        k_e1_hi: k_hi,
        k_e1: k,
        gamma: 1.0 - k,
    })
}

pub fn unit_e1(dim: usize) -> Vec<i64> {
    let mut e = vec![0; dim];
    e[0] = 1;
    e
}
