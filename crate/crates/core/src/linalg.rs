//! Sparse matrices and the action of `e^{tQ}` by uniformization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row entry lists; repeated columns within a row are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if c >= n {
                    return Err(Error::internal(format!("column {c} out of range {n}")));
                }
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|e| e.1).sum()
    }

    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * v[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec(v, &mut out);
        out
    }

    /// Smallest off-diagonal entry (0 for a diagonal matrix).
    pub fn min_off_diagonal(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).filter(move |e| e.0 != i).map(|e| e.1))
            .fold(0.0, f64::min)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Diagnostics of one uniformized exponential action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpmStats {
    pub substeps: usize,
    pub terms: usize,
    /// Sum over substeps of the certified truncation bound, relative to the result.
    pub error_bound: f64,
}

/// Upper bound for `α·Δt` within one substep.
const MAX_SUBSTEP_RATE: f64 = 25.0;
/// Series terms allowed per substep.
const TERM_BUDGET: usize = 2000;

/// `e^{tQ} v` for a matrix with nonnegative off-diagonal entries.
///
/// With `α = max_i |Q_ii|` and `P = I + Q/α ≥ 0`, each substep sums
/// `e^{-αΔt} Σ_k (αΔt)^k/k! P^k v` until the geometric tail bound built from
/// `‖P‖∞` falls below `rel_tol/substeps` of the partial sum.
pub fn expm_action(
    q: &CsrMatrix,
    v: &[f64],
    t: f64,
    rel_tol: f64,
) -> Result<(Vec<f64>, ExpmStats)> {
    if v.len() != q.dim() {
        return Err(Error::config(format!(
            "vector of length {} for a {}-state operator",
            v.len(),
            q.dim()
        )));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!(
            "exponential time must be finite and >= 0, got {t}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("vector must be finite"));
    }
    let zero_stats = ExpmStats {
        substeps: 0,
        terms: 0,
        error_bound: 0.0,
    };
    if t == 0.0 {
        return Ok((v.to_vec(), zero_stats));
    }
    if q.min_off_diagonal() < 0.0 {
        return Err(Error::domain(
            "uniformization needs nonnegative off-diagonal entries",
        ));
    }
    // any α ≥ max|Q_ii| keeps P nonnegative; the off-diagonal mass keeps α > 0
    let alpha = (0..q.dim())
        .map(|i| {
            q.diag(i)
                .abs()
                .max(q.row(i).filter(|e| e.0 != i).map(|e| e.1).sum())
        })
        .fold(0.0, f64::max);
    if alpha == 0.0 {
        return Ok((v.to_vec(), zero_stats));
    }
    // ‖P‖∞ with P = I + Q/α
    let p_norm = (0..q.dim())
        .map(|i| 1.0 + q.row_sum(i) / alpha)
        .fold(0.0, f64::max)
        .max(1.0);
    let substeps = ((alpha * t * p_norm) / MAX_SUBSTEP_RATE).ceil().max(1.0) as usize;
    let dt = t / substeps as f64;
    let rate = alpha * dt;
    let tol = rel_tol / substeps as f64;
    let n = q.dim();
    let mut cur = v.to_vec();
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut total_terms = 0;
    let mut bound = 0.0;
    for step in 0..substeps {
        let w0 = (-rate).exp();
        for i in 0..n {
            term[i] = w0 * cur[i];
        }
        let mut acc = term.clone();
        let mut k = 0usize;
        loop {
            k += 1;
            // next = P·term·rate/k
            q.matvec(&term, &mut next);
            let c = rate / k as f64;
            for i in 0..n {
                term[i] = c * (term[i] + next[i] / alpha);
            }
            for i in 0..n {
                acc[i] += term[i];
            }
            let term_norm = inf_norm(&term);
            let acc_norm = inf_norm(&acc);
            let ratio = rate * p_norm / (k as f64 + 1.0);
            if ratio < 1.0 {
                let tail = term_norm * ratio / (1.0 - ratio);
                if tail <= tol * acc_norm || acc_norm == 0.0 {
                    bound += if acc_norm > 0.0 { tail / acc_norm } else { 0.0 };
                    break;
                }
            }
            if k >= TERM_BUDGET {
                return Err(Error::numeric(format!(
                    "uniformization did not converge in {TERM_BUDGET} terms (substep {step} of {substeps}, alpha*dt = {rate:.3}, |P| = {p_norm:.3})"
                )));
            }
        }
        total_terms += k;
        cur = acc;
    }
    Ok((
        cur,
        ExpmStats {
            substeps,
            terms: total_terms,
            error_bound: bound,
        },
    ))
}

/// Dense `e^{tQ}`, for small oracle instances.
pub fn dense_expm(q: &CsrMatrix, t: f64) -> DMatrix<f64> {
    (q.to_dense() * t).exp()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
