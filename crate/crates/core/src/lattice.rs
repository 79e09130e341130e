//! Periodic lattice geometry and the centered l∞ balls used by the
//! whole-lattice operators.

use crate::error::{Error, Result};

/// Site coordinates in the centered representation: each component lies in
/// `[-⌊L/2⌋, L-1-⌊L/2⌋]` on a torus of side `L`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SiteCoord(Vec<i64>);

impl SiteCoord {
    pub fn new(components: Vec<i64>) -> Self {
        SiteCoord(components)
    }

    pub fn origin(dim: usize) -> Self {
        SiteCoord(vec![0; dim])
    }

    pub fn components(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }
}

impl From<Vec<i64>> for SiteCoord {
    fn from(v: Vec<i64>) -> Self {
        SiteCoord(v)
    }
}

/// A `d`-dimensional periodic cubic lattice of side `L`.
///
/// Sites are indexed `0..L^d` with axis 0 varying fastest; index 0 is the
/// origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorusGeometry {
    dim: usize,
    side: usize,
    n_sites: usize,
    strides: Vec<usize>,
}

impl TorusGeometry {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("lattice dimension must be positive"));
        }
        if side < 3 {
            return Err(Error::config(format!(
                "torus side L = {side} violates the L >= 3 rule (L = 2 doubles every edge)"
            )));
        }
        let mut strides = Vec::with_capacity(dim);
        let mut n: usize = 1;
        for _ in 0..dim {
            strides.push(n);
            n = n
                .checked_mul(side)
                .ok_or_else(|| Error::config(format!("L^d overflows for L = {side}, d = {dim}")))?;
        }
        Ok(TorusGeometry {
            dim,
            side,
            n_sites: n,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn origin(&self) -> usize {
        0
    }

    /// Smallest centered component, `-⌊L/2⌋`.
    pub fn min_centered(&self) -> i64 {
        -((self.side / 2) as i64)
    }

    /// Largest centered component, `L-1-⌊L/2⌋`.
    pub fn max_centered(&self) -> i64 {
        (self.side - 1 - self.side / 2) as i64
    }

    /// Centered representative of an arbitrary integer component.
    pub fn centered(&self, c: i64) -> i64 {
        let l = self.side as i64;
        let r = c.rem_euclid(l);
        if r > self.max_centered() {
            r - l
        } else {
            r
        }
    }

    pub fn site_index(&self, coord: &[i64]) -> Result<usize> {
        if coord.len() != self.dim {
            return Err(Error::config(format!(
                "coordinate has {} components, lattice has dimension {}",
                coord.len(),
                self.dim
            )));
        }
        let l = self.side as i64;
        Ok(coord
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c.rem_euclid(l) as usize * s)
            .sum())
    }

    pub fn coord_of_index(&self, index: usize) -> SiteCoord {
        debug_assert!(index < self.n_sites);
        SiteCoord(
            (0..self.dim)
                .map(|axis| self.centered(self.residue(index, axis) as i64))
                .collect(),
        )
    }

    /// Writes the centered coordinates of `index` into `out` (length `d`).
    pub fn coord_into(&self, index: usize, out: &mut [i64]) {
        for (axis, o) in out.iter_mut().enumerate() {
            *o = self.centered(self.residue(index, axis) as i64);
        }
    }

    #[inline]
    fn residue(&self, index: usize, axis: usize) -> usize {
        (index / self.strides[axis]) % self.side
    }

    /// Number of neighbors of every site, `2d`.
    #[inline]
    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    /// Neighbor of `index` in direction `dir ∈ [0, 2d)`: axis `dir / 2`,
    /// `+1` for even `dir` and `-1` for odd.
    #[inline]
    pub fn neighbor(&self, index: usize, dir: usize) -> usize {
        let axis = dir >> 1;
        let stride = self.strides[axis];
        let r = (index / stride) % self.side;
        if dir & 1 == 0 {
            if r + 1 == self.side {
                index - r * stride
            } else {
                index + stride
            }
        } else if r == 0 {
            index + (self.side - 1) * stride
        } else {
            index - stride
        }
    }

    pub fn neighbors(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.n_sites {
            return Err(Error::config(format!(
                "site index {index} out of range for {} sites",
                self.n_sites
            )));
        }
        Ok((0..self.degree())
            .map(|dir| self.neighbor(index, dir))
            .collect())
    }

    /// Centered displacement `to - from`.
    pub fn displacement(&self, from: usize, to: usize) -> SiteCoord {
        SiteCoord(
            (0..self.dim)
                .map(|axis| {
                    let a = self.residue(from, axis) as i64;
                    let b = self.residue(to, axis) as i64;
                    self.centered(b - a)
                })
                .collect(),
        )
    }

    /// Per-axis residue of the displacement `to - from`, in `[0, L)`.
    #[inline]
    pub fn displacement_residue(&self, from: usize, to: usize, axis: usize) -> usize {
        let a = self.residue(from, axis);
        let b = self.residue(to, axis);
        (b + self.side - a) % self.side
    }
}

/// The centered l∞ ball `{x ∈ Z^d : ‖x‖∞ ≤ R}`, indexed densely with axis 0
/// fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenteredBall {
    dim: usize,
    radius: usize,
    width: usize,
    len: usize,
}

impl CenteredBall {
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("ball dimension must be positive"));
        }
        let width = 2 * radius + 1;
        let len = width
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::config("ball too large"))?;
        Ok(CenteredBall {
            dim,
            radius,
            width,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, coord: &[i64]) -> bool {
        coord
            .iter()
            .all(|c| c.unsigned_abs() as usize <= self.radius)
    }

    pub fn index(&self, coord: &[i64]) -> Option<usize> {
        if coord.len() != self.dim || !self.contains(coord) {
            return None;
        }
        let r = self.radius as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &c in coord {
            idx += (c + r) as usize * stride;
            stride *= self.width;
        }
        Some(idx)
    }

    pub fn coord(&self, index: usize) -> SiteCoord {
        let mut out = vec![0i64; self.dim];
        self.coord_into(index, &mut out);
        SiteCoord(out)
    }

    pub fn coord_into(&self, mut index: usize, out: &mut [i64]) {
        let r = self.radius as i64;
        for o in out.iter_mut() {
            *o = (index % self.width) as i64 - r;
            index /= self.width;
        }
    }

    pub fn origin(&self) -> usize {
        self.index(&vec![0; self.dim])
            .expect("origin is in every ball")
    }

    /// Index of the unit vector `e_1`, if the ball has radius at least 1.
    pub fn e1(&self) -> Option<usize> {
        let mut c = vec![0; self.dim];
        c[0] = 1;
        self.index(&c)
    }

    /// Neighbor in direction `dir` (same convention as [`TorusGeometry::neighbor`]),
    /// or `None` if it leaves the ball.
    #[inline]
    pub fn neighbor(&self, index: usize, dir: usize) -> Option<usize> {
        let axis = dir >> 1;
        let stride = self.width.pow(axis as u32);
        let r = (index / stride) % self.width;
        if dir & 1 == 0 {
            (r + 1 < self.width).then(|| index + stride)
        } else {
            (r > 0).then(|| index - stride)
        }
    }

    /// True if every neighbor of `index` lies in the ball.
    pub fn is_interior(&self, index: usize) -> bool {
        (0..2 * self.dim).all(|dir| self.neighbor(index, dir).is_some())
    }
}
