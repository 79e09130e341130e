//! Second-moment operators: `M_λ` and `C_λ` on site pairs of a torus, `Ψ`
//! on a truncated ball of `Z^d`, their exponential actions, and the numeric
//! certificates built on them.

use crate::error::{Error, Result};
use crate::kernels::{h_lambda, ReturnTable};
use crate::lattice::{CenteredBall, TorusGeometry};
use crate::linalg::{dense_expm, expm_action, CsrMatrix};
use crate::process::{replicate_functional, ProcessState, ReplicaMoments};

/// Relative tolerance of every uniformized exponential action here.
pub const EXPM_TOL: f64 = 1e-10;
/// Largest torus (in sites) whose pair space may be built.
pub const MAX_PAIR_SITES: usize = 4096;
/// Largest torus (in sites) for dense pair exponentials.
pub const MAX_DENSE_SITES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    /// Evolution matrix of `E[η(x)η(y)]`.
    MLambda,
    /// Q-matrix of two independent rate-`λ` walks.
    CLambda,
}

/// Sparse operator on pairs `(x, y)`, flattened to `x·n + y`.
#[derive(Debug, Clone)]
pub struct PairGenerator {
    geom: TorusGeometry,
    lambda: f64,
    kind: PairKind,
    matrix: CsrMatrix,
}

impl PairGenerator {
    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> PairKind {
        self.kind
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn pair_index(&self, x: usize, y: usize) -> usize {
        x * self.geom.n_sites() + y
    }

    pub fn entry(&self, from: (usize, usize), to: (usize, usize)) -> f64 {
        self.matrix
            .get(self.pair_index(from.0, from.1), self.pair_index(to.0, to.1))
    }

    pub fn row_sum(&self, x: usize, y: usize) -> f64 {
        self.matrix.row_sum(self.pair_index(x, y))
    }
}

pub fn build_pair_generator(
    lambda: f64,
    geom: &TorusGeometry,
    kind: PairKind,
) -> Result<PairGenerator> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let n = geom.n_sites();
    if n > MAX_PAIR_SITES {
        return Err(Error::config(format!(
            "pair space of {n} sites exceeds the budget of {MAX_PAIR_SITES} sites"
        )));
    }
    let d = geom.dim() as f64;
    let nbrs: Vec<Vec<usize>> = (0..n).map(|x| geom.neighbors(x)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            let mut row = Vec::with_capacity(6 * geom.dim() + 1);
            let diag_pair = x == y && kind == PairKind::MLambda;
            if diag_pair {
                // E[η(x)²]: drift 2κ, death -1, gains (η(x)+η(u))² - η(x)²
                row.push((x * n + x, 1.0 - 4.0 * lambda * d));
                for &u in &nbrs[x] {
                    row.push((u * n + u, lambda));
                    row.push((x * n + u, lambda));
                    row.push((u * n + x, lambda));
                }
            } else {
                row.push((x * n + y, -4.0 * lambda * d));
                for &u in &nbrs[x] {
                    row.push((u * n + y, lambda));
                }
                for &v in &nbrs[y] {
                    row.push((x * n + v, lambda));
                }
            }
            rows.push(row);
        }
    }
    Ok(PairGenerator {
        geom: geom.clone(),
        lambda,
        kind,
        matrix: CsrMatrix::from_rows(rows)?,
    })
}

/// `Γ₀(x, y) = η₀(x) η₀(y)` for a deterministic start.
pub fn pair_moments_of_field(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .flat_map(|&a| values.iter().map(move |&b| a * b))
        .collect()
}

/// `Γ_t = e^{t·gen} Γ₀`.
pub fn evolve_pair_moments(gamma0: &[f64], t: f64, gen: &PairGenerator) -> Result<Vec<f64>> {
    expm_action(gen.matrix(), gamma0, t, EXPM_TOL)
        .map(|r| r.0)
        .map_err(|e| e.context(format!("pair moments at t = {t}")))
}

/// Monte Carlo estimate of `E[η_t(x) η_t(y)]`, flattened like [`pair_moments_of_field`].
pub fn mc_pair_moments(
    geom: &TorusGeometry,
    lambda: f64,
    initial: &[f64],
    t: f64,
    replicas: usize,
    master_seed: u64,
) -> Result<ReplicaMoments> {
    let n = geom.n_sites();
    if n > MAX_PAIR_SITES {
        return Err(Error::config(format!(
            "pair moments need at most {MAX_PAIR_SITES} sites, got {n}"
        )));
    }
    replicate_functional(replicas, master_seed, n * n, |seed, out| {
        let mut p = ProcessState::from_values(geom.clone(), lambda, initial.to_vec(), seed)?;
        p.advance(t)?;
        out.copy_from_slice(&pair_moments_of_field(&p.field_values()));
        Ok(())
    })
}

/// `Ψ` on the centered ball of radius `R`, with `J = 0` outside.
#[derive(Debug, Clone)]
pub struct PsiOperator {
    ball: CenteredBall,
    lambda: f64,
    matrix: CsrMatrix,
}

impl PsiOperator {
    pub fn ball(&self) -> &CenteredBall {
        &self.ball
    }

    pub fn radius(&self) -> usize {
        self.ball.radius()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// `J_t = e^{tΨ} 1`.
    pub fn evolve_j(&self, t: f64) -> Result<Vec<f64>> {
        expm_action(&self.matrix, &vec![1.0; self.ball.len()], t, EXPM_TOL)
            .map(|r| r.0)
            .map_err(|e| e.context(format!("J at t = {t}, R = {}", self.radius())))
    }
}

pub fn build_psi(lambda: f64, dim: usize, radius: usize) -> Result<PsiOperator> {
    if radius < 2 {
        return Err(Error::config(format!(
            "Psi radius must be >= 2, got {radius}"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let ball = CenteredBall::new(dim, radius)?;
    let d = dim as f64;
    let o = ball.origin();
    let e1 = ball.e1().expect("radius >= 2 contains e1");
    let rows = (0..ball.len())
        .map(|x| {
            if x == o {
                // lattice symmetry folds the 2d neighbors of O onto e1
                vec![(o, 1.0 - 2.0 * lambda * d), (e1, 4.0 * lambda * d)]
            } else {
                let mut row = vec![(x, -4.0 * lambda * d)];
                row.extend(
                    (0..2 * dim)
                        .filter_map(|dir| ball.neighbor(x, dir))
                        .map(|y| (y, 2.0 * lambda)),
                );
                row
            }
        })
        .collect();
    Ok(PsiOperator {
        ball,
        lambda,
        matrix: CsrMatrix::from_rows(rows)?,
    })
}

/// `J_t` on the ball of radius `R`.
pub fn evolve_j(t: f64, lambda: f64, dim: usize, radius: usize) -> Result<Vec<f64>> {
    build_psi(lambda, dim, radius)?.evolve_j(t)
}

/// `ΨΛ` for `Λ = k + h` over interior rows (all neighbors inside the ball).
#[derive(Debug, Clone, PartialEq)]
pub struct NullResidual {
    pub radius: usize,
    pub h: f64,
    pub at_origin: f64,
    pub max_off_origin: f64,
    pub max_interior: f64,
}

pub fn psi_null_residual(psi: &PsiOperator, k: &ReturnTable, h: f64) -> Result<NullResidual> {
    let ball = psi.ball();
    if k.dim() != ball.dim() || k.radius() < ball.radius() {
        return Err(Error::config(format!(
            "return table of radius {} does not cover the Psi ball of radius {}",
            k.radius(),
            ball.radius()
        )));
    }
    let lam: Vec<f64> = (0..ball.len())
        .map(|i| k.k(ball.coord(i).components()).unwrap() + h)
        .collect();
    let r = psi.matrix().mul_vec(&lam);
    let o = ball.origin();
    let at_origin = r[o].abs();
    let max_off_origin = (0..ball.len())
        .filter(|&i| i != o && ball.is_interior(i))
        .map(|i| r[i].abs())
        .fold(0.0, f64::max);
    Ok(NullResidual {
        radius: ball.radius(),
        h,
        at_origin,
        max_off_origin,
        max_interior: at_origin.max(max_off_origin),
    })
}

/// One site of the second-moment bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub coord: Vec<i64>,
    pub t: f64,
    pub j: f64,
    pub bound: f64,
    pub ratio: f64,
    pub radius: usize,
    /// `|J_t^{(R)} - J_t^{(R')}|` against the wider truncation.
    pub delta: f64,
}

/// Compares `J_t(x)` with `(k(x) + h)/h` on `‖x‖∞ ≤ R/2`.
pub fn bound_check(
    lambda: f64,
    dim: usize,
    radius: usize,
    wide_radius: usize,
    times: &[f64],
    k: &ReturnTable,
    gamma: f64,
) -> Result<Vec<BoundRow>> {
    let h = h_lambda(lambda, dim, gamma)?;
    if !h.positive {
        return Err(Error::domain(format!(
            "the bound needs h_lambda > 0; lambda = {lambda} gives {}",
            h.value
        )));
    }
    if wide_radius <= radius {
        return Err(Error::config("the comparison radius must exceed R"));
    }
    let inner = radius / 2;
    if k.radius() < inner {
        return Err(Error::config(
            "return table does not cover the inner half-ball",
        ));
    }
    let psi = build_psi(lambda, dim, radius)?;
    let wide = build_psi(lambda, dim, wide_radius)?;
    let inner_ball = CenteredBall::new(dim, inner)?;
    let mut rows = Vec::new();
    for &t in times {
        let j = psi.evolve_j(t)?;
        let jw = wide.evolve_j(t)?;
        for i in 0..inner_ball.len() {
            let c = inner_ball.coord(i);
            let x = c.components();
            let jx = j[psi.ball().index(x).unwrap()];
            let bound = (k.k(x).unwrap() + h.value) / h.value;
            rows.push(BoundRow {
                coord: x.to_vec(),
                t,
                j: jx,
                bound,
                ratio: jx / bound,
                radius,
                delta: (jx - jw[wide.ball().index(x).unwrap()]).abs(),
            });
        }
    }
    Ok(rows)
}

/// `‖ρ₀‖∞² (k(O) + h_λ)/h_λ` with `k(O) = 1`.
pub fn second_moment_bound(lambda: f64, dim: usize, gamma: f64, rho_sup: f64) -> Result<f64> {
    let h = h_lambda(lambda, dim, gamma)?;
    if !h.positive {
        return Err(Error::domain(format!(
            "second-moment bound needs h_lambda > 0; lambda = {lambda} gives {}",
            h.value
        )));
    }
    Ok(rho_sup * rho_sup * (1.0 + h.value) / h.value)
}

/// Smallest entry of `e^{tM_λ} - e^{tC_λ}` and of the shifted comparison
/// `e^{t(4λd I + M_λ)} - e^{t(4λd I + C_λ)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityReport {
    pub min_entry: f64,
    pub min_shifted_entry: f64,
}

pub fn check_pair_positivity(
    t: f64,
    lambda: f64,
    geom: &TorusGeometry,
) -> Result<PositivityReport> {
    if geom.n_sites() > MAX_DENSE_SITES {
        return Err(Error::config(format!(
            "dense pair exponentials need L^d <= {MAX_DENSE_SITES}, got {}",
            geom.n_sites()
        )));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!(
            "time must be finite and >= 0, got {t}"
        )));
    }
    let m = build_pair_generator(lambda, geom, PairKind::MLambda)?;
    let c = build_pair_generator(lambda, geom, PairKind::CLambda)?;
    let em = dense_expm(m.matrix(), t);
    let ec = dense_expm(c.matrix(), t);
    let diff = &em - &ec;
    let shift = (4.0 * lambda * geom.dim() as f64 * t).exp();
    let min_entry = diff.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PositivityReport {
        min_entry,
        min_shifted_entry: min_entry * shift,
    })
}
