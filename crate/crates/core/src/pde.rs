//! The limiting density `ρ(t, u)` of the heat equation `∂_t ρ = λΔρ`: the
//! Gaussian-convolution form evaluated by Gauss–Hermite quadrature, an
//! explicit finite-difference solver as an independent oracle, and the
//! residual of the weak formulation.

use crate::error::{Error, Result};
use crate::process::profile::{DensityProfile, TestFunction};
use crate::scalar::Real;

/// Gauss–Hermite rule for the weight `e^{-x²}` on `R`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let xm = 0.5 * (b + a);
    let xl = 0.5 * (b - a);
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = xm - xl * z;
        x[n - 1 - i] = xm + xl * z;
        w[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature orders used for spatial integrals against a test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialQuadrature {
    /// Gauss–Legendre nodes per panel and axis.
    pub order: usize,
    /// Panels per axis across the support box of `G`.
    pub panels: usize,
}

impl Default for SpatialQuadrature {
    fn default() -> Self {
        SpatialQuadrature {
            order: 8,
            panels: 8,
        }
    }
}

/// One coordinate factor of a separable profile, `ρ₀(u) = height · Π_a f(u_a - c_a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum AxisShape {
    Box { radius: f64 },
    Gauss { width: f64 },
    Plateau { radius: f64, taper: f64 },
}

/// Gaussian tails beyond this many widths are below `1e-17` of the peak.
const GAUSS_TAIL_WIDTHS: f64 = 9.0;
/// Heat-kernel tails beyond this many standard deviations are dropped.
const KERNEL_TAIL_SIGMAS: f64 = 10.0;

impl AxisShape {
    fn of<T: Real>(profile: &DensityProfile<T>) -> Self {
        match *profile {
            DensityProfile::ConstantBump { radius, .. } => AxisShape::Box {
                radius: radius.as_f64(),
            },
            DensityProfile::GaussianBump { width, .. } => AxisShape::Gauss {
                width: width.as_f64(),
            },
            DensityProfile::SmoothBox { radius, taper, .. } => AxisShape::Plateau {
                radius: radius.as_f64(),
                taper: taper.as_f64(),
            },
        }
    }

    fn eval(&self, z: f64) -> f64 {
        match *self {
            AxisShape::Box { radius } => {
                if z.abs() <= radius {
                    1.0
                } else {
                    0.0
                }
            }
            AxisShape::Gauss { width } => (-z * z / (2.0 * width * width)).exp(),
            AxisShape::Plateau { radius, taper } => {
                let excess = z.abs() - radius;
                if excess <= 0.0 {
                    1.0
                } else if excess >= taper {
                    0.0
                } else {
                    let s = excess / taper;
                    1.0 - s * s * s * (s * (s * 6.0 - 15.0) + 10.0)
                }
            }
        }
    }

    /// Smooth pieces covering the support.
    fn pieces(&self) -> Vec<(f64, f64)> {
        match *self {
            AxisShape::Box { radius } => vec![(-radius, radius)],
            AxisShape::Gauss { width } => {
                vec![(-GAUSS_TAIL_WIDTHS * width, GAUSS_TAIL_WIDTHS * width)]
            }
            AxisShape::Plateau { radius, taper } => vec![
                (-radius - taper, -radius),
                (-radius, radius),
                (radius, radius + taper),
            ],
        }
    }

    /// Length scale on which the factor varies.
    fn scale(&self) -> f64 {
        match *self {
            AxisShape::Box { .. } => f64::INFINITY,
            AxisShape::Gauss { width } => width,
            AxisShape::Plateau { taper, .. } => taper,
        }
    }
}

/// `ρ(t, u) = ∫ (4πλt)^{-d/2} e^{-|v|²/(4λt)} ρ₀(u + v) dv`, the Gaussian
/// convolution of the initial profile.
///
/// Every preset profile is a product over coordinates, so `ρ(t, ·)` is the
/// product of 1-d convolutions; each is integrated by composite
/// Gauss–Legendre on the smooth pieces of the factor, with panels no wider
/// than half the smaller of the kernel and profile length scales. The
/// product Gauss–Hermite form with the kernel as weight is kept as
/// [`HeatSolution::eval_hermite`].
#[derive(Debug, Clone)]
pub struct HeatSolution<T> {
    profile: DensityProfile<T>,
    lambda: T,
    order: usize,
    shape: AxisShape,
    center: Vec<f64>,
    height: f64,
    legendre: (Vec<f64>, Vec<f64>),
    hermite_nodes: Vec<T>,
    hermite_weights: Vec<T>,
}

/// Smallest accepted quadrature order.
pub const MIN_ORDER: usize = 8;

impl<T: Real> HeatSolution<T> {
    /// `order` is the Gauss–Legendre order per panel and the Gauss–Hermite order.
    pub fn new(profile: DensityProfile<T>, lambda: T, order: usize) -> Result<Self> {
        if order < MIN_ORDER {
            return Err(Error::config(format!(
                "quadrature order must be >= {MIN_ORDER}, got {order}"
            )));
        }
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(Error::domain(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        profile.validate()?;
        let (x, w) = gauss_hermite(order);
        let norm = std::f64::consts::PI.sqrt();
        Ok(HeatSolution {
            shape: AxisShape::of(&profile),
            center: profile.center().iter().map(|c| c.as_f64()).collect(),
            height: profile.height().as_f64(),
            legendre: gauss_legendre(order, -1.0, 1.0),
            hermite_nodes: x.into_iter().map(T::of).collect(),
            hermite_weights: w.into_iter().map(|v| T::of(v / norm)).collect(),
            profile,
            lambda,
            order,
        })
    }

    pub fn profile(&self) -> &DensityProfile<T> {
        &self.profile
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn check(&self, t: T, u: &[T]) -> Result<()> {
        if !(t >= T::zero()) || !t.is_finite() {
            return Err(Error::domain(format!(
                "heat solution needs t >= 0, got {t}"
            )));
        }
        let d = self.profile.dim();
        if u.len() != d {
            return Err(Error::config(format!(
                "point has {} coordinates, expected {d}",
                u.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, t: T, u: &[T]) -> Result<T> {
        self.check(t, u)?;
        if t == T::zero() {
            return Ok(self.profile.eval(u));
        }
        let tf = t.as_f64();
        let v = u
            .iter()
            .enumerate()
            .map(|(a, &x)| self.axis_value(tf, a, x.as_f64()))
            .product::<f64>();
        Ok(T::of(self.height * v))
    }

    /// `(φ_{2λt} * f)(x)` along axis `a`, with `f` the unit-height factor.
    fn axis_value(&self, t: f64, axis: usize, x: f64) -> f64 {
        let z = x - self.center[axis];
        if t == 0.0 {
            return self.shape.eval(z);
        }
        let sigma = (2.0 * self.lambda.as_f64() * t).sqrt();
        let panel = 0.5 * sigma.min(self.shape.scale());
        let (lo_k, hi_k) = (
            z - KERNEL_TAIL_SIGMAS * sigma,
            z + KERNEL_TAIL_SIGMAS * sigma,
        );
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let (gx, gw) = &self.legendre;
        let mut acc = 0.0;
        for (a, b) in self.shape.pieces() {
            let (a, b) = (a.max(lo_k), b.min(hi_k));
            if a >= b {
                continue;
            }
            let panels = ((b - a) / panel).ceil().max(1.0) as usize;
            let width = (b - a) / panels as f64;
            for p in 0..panels {
                let mid = a + width * (p as f64 + 0.5);
                for (&xi, &wi) in gx.iter().zip(gw) {
                    let y = mid + 0.5 * width * xi;
                    let k = (-(y - z) * (y - z) / (2.0 * sigma * sigma)).exp();
                    acc += 0.5 * width * wi * k * self.shape.eval(y);
                }
            }
        }
        acc * norm
    }

    /// `ρ(t, u) = π^{-d/2} ∫ e^{-|y|²} ρ₀(2√(λt) y + u) dy` by product
    /// Gauss–Hermite; accurate only while `√(2λt)` is small against the
    /// profile's length scale.
    pub fn eval_hermite(&self, t: T, u: &[T]) -> Result<T> {
        self.check(t, u)?;
        if t == T::zero() {
            return Ok(self.profile.eval(u));
        }
        let d = self.profile.dim();
        let scale = T::of(2.0) * (self.lambda * t).sqrt();
        let n = self.order;
        let mut idx = vec![0usize; d];
        let mut p = vec![T::zero(); d];
        let mut acc = T::zero();
        loop {
            let mut w = T::one();
            for a in 0..d {
                p[a] = scale * self.hermite_nodes[idx[a]] + u[a];
                w = w * self.hermite_weights[idx[a]];
            }
            acc = acc + w * self.profile.eval(&p);
            let mut a = 0;
            loop {
                if a == d {
                    return Ok(acc);
                }
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    /// `∫ ρ(t, u) f(u) du` over the support box of `g`, where `f` is `g` or its Laplacian.
    fn integrate(
        &self,
        t: T,
        g: &TestFunction<T>,
        quad: SpatialQuadrature,
        laplacian: bool,
    ) -> Result<T> {
        if !(t >= T::zero()) || !t.is_finite() {
            return Err(Error::domain(format!(
                "heat solution needs t >= 0, got {t}"
            )));
        }
        let d = self.profile.dim();
        if g.dim() != d {
            return Err(Error::config("test function and profile dimensions differ"));
        }
        if quad.order == 0 || quad.panels == 0 {
            return Err(Error::config(
                "spatial quadrature needs positive order and panels",
            ));
        }
        let r = g.support_radius().as_f64();
        let per_axis = quad.order * quad.panels;
        let mut xs = Vec::with_capacity(per_axis);
        let mut ws = Vec::with_capacity(per_axis);
        let width = 2.0 * r / quad.panels as f64;
        for p in 0..quad.panels {
            let a = -r + width * p as f64;
            let (x, w) = gauss_legendre(quad.order, a, a + width);
            xs.extend(x);
            ws.extend(w);
        }
        let gc: Vec<f64> = g.center().iter().map(|c| c.as_f64()).collect();
        let tf = t.as_f64();
        // ρ(t, ·) factorizes, so each axis needs only per_axis 1-d convolutions
        let factors: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                xs.iter()
                    .map(|&x| self.axis_value(tf, a, gc[a] + x))
                    .collect()
            })
            .collect();
        let total = per_axis.pow(d as u32);
        let mut u = vec![T::zero(); d];
        let mut acc = 0.0;
        for mut k in 0..total {
            let mut w = self.height;
            for a in 0..d {
                let i = k % per_axis;
                k /= per_axis;
                u[a] = T::of(gc[a] + xs[i]);
                w *= ws[i] * factors[a][i];
            }
            if w == 0.0 {
                continue;
            }
            let f = if laplacian {
                g.laplacian(&u)
            } else {
                g.eval(&u)
            };
            acc += w * f.as_f64();
        }
        Ok(T::of(acc))
    }

    /// `∫ ρ(t, u) G(u) du`.
    pub fn pair_with(&self, t: T, g: &TestFunction<T>, quad: SpatialQuadrature) -> Result<T> {
        self.integrate(t, g, quad, false)
    }

    /// `∫ ρ(t, u) ΔG(u) du`.
    pub fn pair_with_laplacian(
        &self,
        t: T,
        g: &TestFunction<T>,
        quad: SpatialQuadrature,
    ) -> Result<T> {
        self.integrate(t, g, quad, true)
    }
}

/// `ρ(t, u)` for a one-off evaluation.
pub fn heat_solution<T: Real>(
    profile: &DensityProfile<T>,
    t: T,
    u: &[T],
    lambda: T,
    order: usize,
) -> Result<T> {
    if !(t >= T::zero()) {
        return Err(Error::domain(format!(
            "heat solution needs t >= 0, got {t}"
        )));
    }
    HeatSolution::new(profile.clone(), lambda, order)?.eval(t, u)
}

/// `∫ρ_t G - ∫ρ₀ G - λ ∫₀ᵗ ∫ρ_s ΔG du ds`, the time integral by Simpson's rule
/// on `time_steps` points.
pub fn weak_residual<T: Real>(
    heat: &HeatSolution<T>,
    g: &TestFunction<T>,
    t: T,
    time_steps: usize,
    quad: SpatialQuadrature,
) -> Result<T> {
    weak_residual_with_coefficient(heat, g, t, heat.lambda(), time_steps, quad)
}

/// [`weak_residual`] with an arbitrary coefficient in front of the time
/// integral; any value other than `λ` should leave a visible residual.
pub fn weak_residual_with_coefficient<T: Real>(
    heat: &HeatSolution<T>,
    g: &TestFunction<T>,
    t: T,
    coefficient: T,
    time_steps: usize,
    quad: SpatialQuadrature,
) -> Result<T> {
    if time_steps < 3 || time_steps.is_multiple_of(2) {
        return Err(Error::config(format!(
            "Simpson's rule needs an odd number of time points >= 3, got {time_steps}"
        )));
    }
    if !(t >= T::zero()) {
        return Err(Error::domain(format!(
            "weak residual needs t >= 0, got {t}"
        )));
    }
    if t == T::zero() {
        return Ok(T::zero());
    }
    let end = heat.pair_with(t, g, quad)?;
    let start = heat.pair_with(T::zero(), g, quad)?;
    let n = time_steps - 1;
    let h = t / T::of_usize(n);
    let mut integral = T::zero();
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let s = h * T::of_usize(i);
        integral = integral + T::of(w) * heat.pair_with_laplacian(s, g, quad)?;
    }
    integral = integral * h / T::of(3.0);
    Ok(end - start - coefficient * integral)
}

/// Heat solution on the grid `h·Z^d ∩ [-B, B]^d`.
#[derive(Debug, Clone)]
pub struct FdGrid<T> {
    dim: usize,
    step: T,
    half_nodes: usize,
    values: Vec<T>,
    pub time_steps: usize,
    pub dt: T,
}

impl<T: Real> FdGrid<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn nodes_per_axis(&self) -> usize {
        2 * self.half_nodes + 1
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Grid coordinate of node `i` along one axis.
    pub fn coord(&self, i: usize) -> T {
        self.step * (T::of_usize(i) - T::of_usize(self.half_nodes))
    }

    /// Multilinear interpolation; `None` outside the box.
    pub fn interpolate(&self, u: &[T]) -> Option<T> {
        let m = self.nodes_per_axis();
        let mut base = vec![0usize; self.dim];
        let mut frac = vec![T::zero(); self.dim];
        for a in 0..self.dim {
            let s = u[a] / self.step + T::of_usize(self.half_nodes);
            if s < T::zero() || s > T::of_usize(m - 1) {
                return None;
            }
            let f = s.floor().min(T::of_usize(m - 2));
            base[a] = f.to_usize()?;
            frac[a] = s - f;
        }
        let mut acc = T::zero();
        for corner in 0..(1usize << self.dim) {
            let mut w = T::one();
            let mut idx = 0;
            let mut stride = 1;
            for a in 0..self.dim {
                let hi = (corner >> a) & 1 == 1;
                w = w * if hi { frac[a] } else { T::one() - frac[a] };
                idx += (base[a] + hi as usize) * stride;
                stride *= m;
            }
            acc = acc + w * self.values[idx];
        }
        Some(acc)
    }

    /// Trapezoid mass `∫ρ du`.
    pub fn mass(&self) -> T {
        let m = self.nodes_per_axis();
        let mut total = T::zero();
        for (i, &v) in self.values.iter().enumerate() {
            let mut w = T::one();
            let mut k = i;
            for _ in 0..self.dim {
                let c = k % m;
                k /= m;
                if c == 0 || c == m - 1 {
                    w = w * T::of(0.5);
                }
            }
            total = total + w * v;
        }
        total * self.step.powi(self.dim as i32)
    }
}

/// Smallest box half-width [`fd_heat_solver`] accepts: support plus six
/// diffusion lengths.
pub fn fd_reach<T: Real>(profile: &DensityProfile<T>, t: T, lambda: T) -> T {
    profile
        .center()
        .iter()
        .fold(T::zero(), |m, c| m.max(c.abs()))
        + profile.support_half_width()
        + T::of(6.0) * (T::of(2.0) * lambda * t).sqrt()
}

/// Explicit Euler for `∂_t ρ = λΔρ` with zero-flux walls at `±half_width`.
pub fn fd_heat_solver<T: Real>(
    profile: &DensityProfile<T>,
    t: T,
    lambda: T,
    grid_step: T,
    half_width: T,
) -> Result<FdGrid<T>> {
    if !(t >= T::zero()) {
        return Err(Error::domain(format!("solver time must be >= 0, got {t}")));
    }
    if !(grid_step > T::zero() && lambda > T::zero()) {
        return Err(Error::config("grid step and lambda must be positive"));
    }
    let d = profile.dim();
    let reach = fd_reach(profile, t, lambda);
    if half_width < reach {
        return Err(Error::config(format!(
            "box half-width {half_width} is below the profile reach {reach} (support plus six diffusion lengths)"
        )));
    }
    let half_nodes = (half_width / grid_step).round().to_usize().unwrap_or(0);
    let m = 2 * half_nodes + 1;
    let total = m
        .checked_pow(d as u32)
        .filter(|&n| n <= 50_000_000)
        .ok_or_else(|| Error::config(format!("grid of {m}^{d} nodes is too large")))?;
    let mut grid = FdGrid {
        dim: d,
        step: grid_step,
        half_nodes,
        values: vec![T::zero(); total],
        time_steps: 0,
        dt: T::zero(),
    };
    let mut u = vec![T::zero(); d];
    for i in 0..total {
        let mut k = i;
        for a in u.iter_mut() {
            *a = grid.coord(k % m);
            k /= m;
        }
        grid.values[i] = profile.eval(&u);
    }
    if t == T::zero() {
        return Ok(grid);
    }
    let dt_max = grid_step * grid_step / (T::of(4.0) * lambda * T::of_usize(d));
    let steps = (t / dt_max).ceil().to_usize().unwrap_or(1).max(1);
    let dt = t / T::of_usize(steps);
    let c = lambda * dt / (grid_step * grid_step);
    let mut next = vec![T::zero(); total];
    for _ in 0..steps {
        for (i, out) in next.iter_mut().enumerate() {
            let v = grid.values[i];
            let mut lap = T::zero();
            let mut stride = 1;
            let mut k = i;
            for _ in 0..d {
                let r = k % m;
                k /= m;
                // mirrored ghost nodes make the walls zero-flux
                let lo = if r == 0 { i + stride } else { i - stride };
                let hi = if r == m - 1 { i - stride } else { i + stride };
                lap = lap + grid.values[lo] + grid.values[hi] - T::of(2.0) * v;
                stride *= m;
            }
            *out = v + c * lap;
        }
        std::mem::swap(&mut grid.values, &mut next);
    }
    grid.time_steps = steps;
    grid.dt = dt;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_polynomials() {
        let (x, w) = gauss_hermite(20);
        let sp = std::f64::consts::PI.sqrt();
        assert!((w.iter().sum::<f64>() - sp).abs() < 1e-13);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m2 - sp / 2.0).abs() < 1e-13);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 3.0 * sp / 4.0).abs() < 1e-12);
        let (x9, _) = gauss_hermite(9);
        assert!(x9[4].abs() < 1e-14);
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(6, -1.0, 2.0);
        let f: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(11)).sum();
        assert!((f - (2f64.powi(12) - 1.0) / 12.0).abs() < 1e-10);
        assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-14);
    }

    fn gaussian_oracle(
        sigma: f64,
        height: f64,
        center: &[f64],
        lambda: f64,
        t: f64,
        u: &[f64],
    ) -> f64 {
        let var = sigma * sigma + 2.0 * lambda * t;
        let d = center.len() as i32;
        let r2: f64 = center.iter().zip(u).map(|(c, x)| (x - c) * (x - c)).sum();
        height * (sigma * sigma / var).powf(d as f64 / 2.0) * (-r2 / (2.0 * var)).exp()
    }

    #[test]
    fn gaussian_profile_spreads_in_closed_form() {
        let c = vec![0.1, -0.2];
        let p = DensityProfile::<f64>::gaussian_bump(c.clone(), 0.3, 1.5).unwrap();
        let heat = HeatSolution::new(p, 0.7, 16).unwrap();
        for &t in &[0.05, 0.5, 2.0] {
            for u in [[0.0, 0.0], [0.4, -0.1], [-0.5, 0.7]] {
                let got = heat.eval(t, &u).unwrap();
                assert!((got - gaussian_oracle(0.3, 1.5, &c, 0.7, t, &u)).abs() < 1e-8);
            }
        }
        assert_eq!(
            heat.eval(0.0, &[0.1, 0.3]).unwrap(),
            heat.profile().eval(&[0.1, 0.3])
        );
        assert!(matches!(
            heat.eval(-0.1, &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn wide_plateau_is_preserved() {
        let p = DensityProfile::<f64>::smooth_box(vec![0.0], 50.0, 1.0, 2.0).unwrap();
        let v = heat_solution(&p, 1.0, &[0.3], 0.5, 16).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
        assert!(heat_solution(&p, 1.0, &[0.3], 0.5, 7).is_err());
    }

    #[test]
    fn heat_equation_residual_is_small() {
        // fourth-order central differences in t and u
        let fd4 = |f: &dyn Fn(f64) -> f64, e: f64| {
            (-f(2.0 * e) + 16.0 * f(e) - 30.0 * f(0.0) + 16.0 * f(-e) - f(-2.0 * e))
                / (12.0 * e * e)
        };
        let d1 = |f: &dyn Fn(f64) -> f64, e: f64| {
            (-f(2.0 * e) + 8.0 * f(e) - 8.0 * f(-e) + f(-2.0 * e)) / (12.0 * e)
        };
        for p in [
            DensityProfile::<f64>::gaussian_bump(vec![0.0, 0.1], 0.3, 1.0).unwrap(),
            DensityProfile::<f64>::smooth_box(vec![0.0, 0.0], 0.4, 0.5, 1.0).unwrap(),
        ] {
            let heat = HeatSolution::new(p, 0.6, 16).unwrap();
            let t = 0.3;
            for u in [[0.2, 0.1], [0.7, -0.3]] {
                let dt = d1(&|s| heat.eval(t + s, &u).unwrap(), 1e-2);
                let mut lap = 0.0;
                for a in 0..2 {
                    lap += fd4(
                        &|s| {
                            let mut v = u;
                            v[a] += s;
                            heat.eval(t, &v).unwrap()
                        },
                        1e-2,
                    );
                }
                assert!((dt - 0.6 * lap).abs() < 1e-5, "{dt} vs {}", 0.6 * lap);
            }
        }
    }

    #[test]
    fn separable_form_matches_profile_and_hermite() {
        for p in [
            DensityProfile::<f64>::gaussian_bump(vec![0.1, -0.2, 0.0], 0.4, 2.0).unwrap(),
            DensityProfile::<f64>::smooth_box(vec![0.0, 0.3, 0.0], 0.5, 0.6, 1.0).unwrap(),
        ] {
            let heat = HeatSolution::new(p.clone(), 0.5, 16).unwrap();
            for u in [[0.0, 0.0, 0.0], [0.1, 0.4, -0.1]] {
                let at_zero = heat.profile().eval(&u);
                assert_eq!(heat.eval(0.0, &u).unwrap(), at_zero);
                // kernel much narrower than the profile: both routes are accurate
                let a = heat.eval(1e-3, &u).unwrap();
                let b = heat.eval_hermite(1e-3, &u).unwrap();
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn maximum_principle_and_order_doubling() {
        let p = DensityProfile::<f64>::constant_bump(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let lo = HeatSolution::new(p.clone(), 0.5, 12).unwrap();
        for u in [[0.0, 0.0], [0.49, 0.1], [1.0, 1.0]] {
            let v = lo.eval(0.2, &u).unwrap();
            assert!((-1e-10..=1.0 + 1e-10).contains(&v));
        }
        for p in [
            DensityProfile::<f64>::gaussian_bump(vec![0.0, 0.0], 0.4, 1.0).unwrap(),
            DensityProfile::<f64>::smooth_box(vec![0.0, 0.0], 0.4, 0.3, 1.0).unwrap(),
            p,
        ] {
            for t in [0.01, 0.3, 3.0] {
                let a = HeatSolution::new(p.clone(), 0.5, 16)
                    .unwrap()
                    .eval(t, &[0.2, 0.1])
                    .unwrap();
                let b = HeatSolution::new(p.clone(), 0.5, 32)
                    .unwrap()
                    .eval(t, &[0.2, 0.1])
                    .unwrap();
                assert!((a - b).abs() < 1e-8, "{} t={t}: {a} vs {b}", p.kind_name());
            }
        }
    }

    #[test]
    fn fd_solver_agrees_with_quadrature_and_conserves_mass() {
        let p = DensityProfile::<f64>::gaussian_bump(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let (lam, t, h) = (0.5, 0.4, 0.05);
        let grid = fd_heat_solver(&p, t, lam, h, 7.0).unwrap();
        let start = fd_heat_solver(&p, 0.0, lam, h, 7.0).unwrap();
        assert!((grid.mass() / start.mass() - 1.0).abs() < 1e-3);
        let heat = HeatSolution::new(p, lam, 24).unwrap();
        for u in [[0.0, 0.0], [0.5, -0.25], [1.0, 1.0]] {
            let fd = grid.interpolate(&u).unwrap();
            let ex = heat.eval(t, &u).unwrap();
            assert!(
                (fd - ex).abs() < f64::max(1e-3, 3.0 * h * h),
                "{fd} vs {ex}"
            );
        }
        assert_eq!(
            start.interpolate(&[0.5, 0.5]).unwrap(),
            heat.profile().eval(&[0.5, 0.5])
        );
    }

    #[test]
    fn fd_solver_rejects_small_box() {
        let p = DensityProfile::<f64>::gaussian_bump(vec![0.0], 0.5, 1.0).unwrap();
        assert!(matches!(
            fd_heat_solver(&p, 1.0, 0.5, 0.05, 2.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn weak_residual_vanishes_for_exact_solution() {
        let p = DensityProfile::<f64>::gaussian_bump(vec![0.1, 0.0], 0.4, 1.0).unwrap();
        let g = TestFunction::<f64>::cosine_bump(vec![0.0, 0.2], 0.8, 1.0).unwrap();
        let heat = HeatSolution::new(p, 0.7, 24).unwrap();
        let q = SpatialQuadrature {
            order: 10,
            panels: 4,
        };
        assert_eq!(weak_residual(&heat, &g, 0.0, 5, q).unwrap(), 0.0);
        let r = weak_residual(&heat, &g, 0.5, 21, q).unwrap();
        assert!(r.abs() < 1e-4, "residual {r}");
        let wrong = weak_residual_with_coefficient(&heat, &g, 0.5, 1.4, 21, q).unwrap();
        assert!(wrong.abs() > 100.0 * r.abs().max(1e-6));
        assert!(weak_residual(&heat, &g, 0.5, 4, q).is_err());
    }
}
