//! Initial density profiles and compactly supported test functions on `R^d`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of widths beyond which a Gaussian profile is treated as zero when
/// checking that it fits in the torus window.
pub const GAUSSIAN_SUPPORT_WIDTHS: f64 = 5.0;

/// Breakpoint (in `|u-c|²/r²`) where the polynomial bump leaves its quadratic core.
const POLY_CORE: f64 = 0.5;

/// Bounded, integrable, nonnegative initial density `ρ₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityProfile<T> {
    /// `height` on the closed box `‖u - center‖∞ ≤ radius`, zero elsewhere.
    ConstantBump {
        center: Vec<T>,
        radius: T,
        height: T,
    },
    /// `height · exp(-|u - center|² / (2 width²))`.
    GaussianBump { center: Vec<T>, width: T, height: T },
    /// Product of 1-d plateaus of half-width `radius` with C² quintic
    /// shoulders of width `taper`.
    SmoothBox {
        center: Vec<T>,
        radius: T,
        taper: T,
        height: T,
    },
}

impl<T: Real> DensityProfile<T> {
    pub fn constant_bump(center: Vec<T>, radius: T, height: T) -> Result<Self> {
        let p = DensityProfile::ConstantBump {
            center,
            radius,
            height,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn gaussian_bump(center: Vec<T>, width: T, height: T) -> Result<Self> {
        let p = DensityProfile::GaussianBump {
            center,
            width,
            height,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn smooth_box(center: Vec<T>, radius: T, taper: T, height: T) -> Result<Self> {
        let p = DensityProfile::SmoothBox {
            center,
            radius,
            taper,
            height,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: T| {
            if v.is_finite() && v >= T::zero() {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "profile {name} must be finite and nonnegative, got {v}"
                )))
            }
        };
        if self.center().is_empty() {
            return Err(Error::config(
                "profile center must have at least one component",
            ));
        }
        if self.center().iter().any(|c| !c.is_finite()) {
            return Err(Error::config("profile center must be finite"));
        }
        match *self {
            DensityProfile::ConstantBump { radius, height, .. } => {
                finite_nonneg("radius", radius)?;
                finite_nonneg("height", height)
            }
            DensityProfile::GaussianBump { width, height, .. } => {
                finite_nonneg("height", height)?;
                if width.is_finite() && width > T::zero() {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "profile width must be positive, got {width}"
                    )))
                }
            }
            DensityProfile::SmoothBox {
                radius,
                taper,
                height,
                ..
            } => {
                finite_nonneg("radius", radius)?;
                finite_nonneg("height", height)?;
                if taper.is_finite() && taper > T::zero() {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "profile taper must be positive, got {taper}"
                    )))
                }
            }
        }
    }

    pub fn center(&self) -> &[T] {
        match self {
            DensityProfile::ConstantBump { center, .. }
            | DensityProfile::GaussianBump { center, .. }
            | DensityProfile::SmoothBox { center, .. } => center,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    pub fn height(&self) -> T {
        match *self {
            DensityProfile::ConstantBump { height, .. }
            | DensityProfile::GaussianBump { height, .. }
            | DensityProfile::SmoothBox { height, .. } => height,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DensityProfile::ConstantBump { .. } => "constant_bump",
            DensityProfile::GaussianBump { .. } => "gaussian_bump",
            DensityProfile::SmoothBox { .. } => "smooth_box",
        }
    }

    /// `‖ρ₀‖∞`.
    pub fn sup_norm(&self) -> T {
        self.height()
    }

    /// Half-width of the l∞ box around `center` outside which the profile
    /// vanishes (Gaussians: is below `exp(-GAUSSIAN_SUPPORT_WIDTHS²/2)` of the peak).
    pub fn support_half_width(&self) -> T {
        match *self {
            DensityProfile::ConstantBump { radius, .. } => radius,
            DensityProfile::GaussianBump { width, .. } => width * T::of(GAUSSIAN_SUPPORT_WIDTHS),
            DensityProfile::SmoothBox { radius, taper, .. } => radius + taper,
        }
    }

    /// l∞ radius around the origin covering the support.
    pub fn support_radius(&self) -> T {
        let off = self.center().iter().fold(T::zero(), |m, &c| m.max(c.abs()));
        off + self.support_half_width()
    }

    pub fn eval(&self, u: &[T]) -> T {
        debug_assert_eq!(u.len(), self.dim());
        match self {
            DensityProfile::ConstantBump {
                center,
                radius,
                height,
            } => {
                if u.iter()
                    .zip(center)
                    .all(|(&a, &c)| (a - c).abs() <= *radius)
                {
                    *height
                } else {
                    T::zero()
                }
            }
            DensityProfile::GaussianBump {
                center,
                width,
                height,
            } => {
                let r2: T = u.iter().zip(center).map(|(&a, &c)| (a - c) * (a - c)).sum();
                *height * (-r2 / (T::of(2.0) * *width * *width)).exp()
            }
            DensityProfile::SmoothBox {
                center,
                radius,
                taper,
                height,
            } => {
                let mut v = *height;
                for (&a, &c) in u.iter().zip(center) {
                    let excess = (a - c).abs() - *radius;
                    if excess <= T::zero() {
                        continue;
                    }
                    if excess >= *taper {
                        return T::zero();
                    }
                    v = v * (T::one() - smoothstep(excess / *taper));
                }
                v
            }
        }
    }
}

/// C² quintic smoothstep on `[0, 1]`.
fn smoothstep<T: Real>(z: T) -> T {
    z * z * z * (z * (z * T::of(6.0) - T::of(15.0)) + T::of(10.0))
}

/// Compactly supported C² test function with a closed-form Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction<T> {
    /// `height · ((1 + cos(π s)) / 2)²` with `s = |u - center| / radius < 1`.
    CosineBump {
        center: Vec<T>,
        radius: T,
        height: T,
    },
    /// `height · φ(|u - center|² / radius²)` where `φ(q) = 1 - q` on the core
    /// `q ≤ 1/2` and a quintic shoulder brings it C²-smoothly to zero at `q = 1`.
    /// The function is exactly quadratic on the core.
    PolynomialBump {
        center: Vec<T>,
        radius: T,
        height: T,
    },
}

impl<T: Real> TestFunction<T> {
    pub fn cosine_bump(center: Vec<T>, radius: T, height: T) -> Result<Self> {
        let g = TestFunction::CosineBump {
            center,
            radius,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn polynomial_bump(center: Vec<T>, radius: T, height: T) -> Result<Self> {
        let g = TestFunction::PolynomialBump {
            center,
            radius,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.center().is_empty() || self.center().iter().any(|c| !c.is_finite()) {
            return Err(Error::config("test function center must be a finite point"));
        }
        let (radius, height) = self.radius_height();
        if !(radius.is_finite() && radius > T::zero()) {
            return Err(Error::config(format!(
                "test function radius must be positive, got {radius}"
            )));
        }
        if !height.is_finite() {
            return Err(Error::config("test function height must be finite"));
        }
        Ok(())
    }

    fn radius_height(&self) -> (T, T) {
        match *self {
            TestFunction::CosineBump { radius, height, .. }
            | TestFunction::PolynomialBump { radius, height, .. } => (radius, height),
        }
    }

    pub fn center(&self) -> &[T] {
        match self {
            TestFunction::CosineBump { center, .. }
            | TestFunction::PolynomialBump { center, .. } => center,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    pub fn radius(&self) -> T {
        self.radius_height().0
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TestFunction::CosineBump { .. } => "cosine_bump",
            TestFunction::PolynomialBump { .. } => "polynomial_bump",
        }
    }

    pub fn sup_norm(&self) -> T {
        self.radius_height().1.abs()
    }

    /// l∞ radius around the origin covering the support.
    pub fn support_radius(&self) -> T {
        let off = self.center().iter().fold(T::zero(), |m, &c| m.max(c.abs()));
        off + self.radius()
    }

    fn dist2(&self, u: &[T]) -> T {
        u.iter()
            .zip(self.center())
            .map(|(&a, &c)| (a - c) * (a - c))
            .sum()
    }

    pub fn eval(&self, u: &[T]) -> T {
        debug_assert_eq!(u.len(), self.dim());
        let (radius, height) = self.radius_height();
        let r2 = self.dist2(u);
        match self {
            TestFunction::CosineBump { .. } => {
                let s = r2.sqrt() / radius;
                if s >= T::one() {
                    return T::zero();
                }
                let c = (T::one() + (T::PI() * s).cos()) / T::of(2.0);
                height * c * c
            }
            TestFunction::PolynomialBump { .. } => {
                let q = r2 / (radius * radius);
                if q >= T::one() {
                    return T::zero();
                }
                height * poly_phi(q).0
            }
        }
    }

    /// Closed-form `ΔG(u)`.
    pub fn laplacian(&self, u: &[T]) -> T {
        let (radius, height) = self.radius_height();
        let d = T::of_usize(self.dim());
        let r2 = self.dist2(u);
        match self {
            TestFunction::CosineBump { .. } => {
                let s = r2.sqrt() / radius;
                if s >= T::one() {
                    return T::zero();
                }
                let pi = T::PI();
                let (sn, cs) = (pi * s).sin_cos();
                let c2 = -(pi * pi / T::of(2.0)) * (cs * (T::one() + cs) - sn * sn);
                // c'(s)/s, with its limit c''(0) at the center
                let c1_over_s = if s > T::zero() {
                    -(pi / T::of(2.0)) * sn * (T::one() + cs) / s
                } else {
                    -pi * pi
                };
                height / (radius * radius) * (c2 + (d - T::one()) * c1_over_s)
            }
            TestFunction::PolynomialBump { .. } => {
                let q = r2 / (radius * radius);
                if q >= T::one() {
                    return T::zero();
                }
                let (_, d1, d2) = poly_phi(q);
                height / (radius * radius) * (T::of(4.0) * q * d2 + T::of(2.0) * d * d1)
            }
        }
    }

    /// True when `u` lies in the region where the polynomial bump is exactly
    /// quadratic. Always false for the cosine bump.
    pub fn in_quadratic_core(&self, u: &[T]) -> bool {
        match self {
            TestFunction::PolynomialBump { radius, .. } => {
                self.dist2(u) <= T::of(POLY_CORE) * *radius * *radius
            }
            TestFunction::CosineBump { .. } => false,
        }
    }
}

/// `(φ, φ', φ'')` of the polynomial bump at `q ∈ [0, 1)`.
fn poly_phi<T: Real>(q: T) -> (T, T, T) {
    let q0 = T::of(POLY_CORE);
    if q <= q0 {
        return (T::one() - q, -T::one(), T::zero());
    }
    let span = T::one() - q0;
    let w = (q - q0) / span;
    let omw = T::one() - w;
    let v = span * omw * omw * omw * (T::one() + T::of(2.0) * w + T::of(3.0) * w * w);
    let d1 = omw * omw * (-T::one() - T::of(2.0) * w - T::of(15.0) * w * w);
    let d2 = omw * (T::of(60.0) * w * w - T::of(24.0) * w) / span;
    (v, d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_laplacian(g: &TestFunction<f64>, u: &[f64], h: f64) -> f64 {
        let g0 = g.eval(u);
        let mut acc = 0.0;
        for axis in 0..u.len() {
            let mut p = u.to_vec();
            let mut m = u.to_vec();
            p[axis] += h;
            m[axis] -= h;
            acc += g.eval(&p) + g.eval(&m) - 2.0 * g0;
        }
        acc / (h * h)
    }

    #[test]
    fn laplacians_match_finite_differences() {
        let gs = [
            TestFunction::cosine_bump(vec![0.1, -0.2, 0.0], 0.7, 1.3).unwrap(),
            TestFunction::polynomial_bump(vec![0.1, -0.2, 0.0], 0.7, 1.3).unwrap(),
        ];
        let pts = [
            [0.1, -0.2, 0.0],
            [0.3, -0.1, 0.05],
            [0.5, -0.3, 0.2],
            [-0.2, 0.1, -0.3],
            [0.15, 0.2, 0.1],
        ];
        for g in &gs {
            for p in &pts {
                let exact = g.laplacian(p);
                let fd = fd_laplacian(g, p, 1e-4);
                assert!(
                    (exact - fd).abs() < 1e-5 * (1.0 + exact.abs()),
                    "{} {p:?}: {exact} vs {fd}",
                    g.kind_name()
                );
            }
        }
    }

    #[test]
    fn polynomial_bump_is_c2_across_breakpoints() {
        // (φ, φ', φ'') continuous at q0 and vanishing at 1
        let below = poly_phi(0.5f64 - 1e-12);
        let above = poly_phi(0.5f64 + 1e-12);
        assert!((below.0 - above.0).abs() < 1e-10);
        assert!((below.1 - above.1).abs() < 1e-10);
        assert!((below.2 - above.2).abs() < 1e-9);
        let end = poly_phi(1.0f64 - 1e-9);
        assert!(end.0.abs() < 1e-20 && end.1.abs() < 1e-15 && end.2.abs() < 1e-6);
    }

    #[test]
    fn test_functions_vanish_off_support() {
        let g = TestFunction::cosine_bump(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        assert_eq!(g.eval(&[0.5, 0.0]), 0.0);
        assert_eq!(g.laplacian(&[0.6, 0.1]), 0.0);
        assert_eq!(g.eval(&[0.0, 0.0]), 1.0);
        let p = TestFunction::polynomial_bump(vec![0.0, 0.0], 0.5, 2.0).unwrap();
        assert_eq!(p.eval(&[0.0, 0.0]), 2.0);
        assert_eq!(p.eval(&[0.0, 0.5]), 0.0);
        assert!(p.in_quadratic_core(&[0.1, 0.1]));
        assert!(!p.in_quadratic_core(&[0.4, 0.0]));
    }

    #[test]
    fn profiles_evaluate_and_validate() {
        let c = DensityProfile::constant_bump(vec![0.0, 0.0], 1.0, 2.5).unwrap();
        assert_eq!(c.eval(&[1.0, -1.0]), 2.5);
        assert_eq!(c.eval(&[1.01, 0.0]), 0.0);
        let g = DensityProfile::gaussian_bump(vec![0.0], 0.5, 1.0).unwrap();
        assert!((g.eval(&[0.5]) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.support_radius() - 2.5).abs() < 1e-15);
        let s = DensityProfile::smooth_box(vec![0.0, 0.0], 0.5, 0.25, 1.0).unwrap();
        assert_eq!(s.eval(&[0.4, -0.5]), 1.0);
        assert_eq!(s.eval(&[0.75, 0.0]), 0.0);
        let mid: f64 = s.eval(&[0.625, 0.0]);
        assert!((mid - 0.5).abs() < 1e-12);
        assert!(DensityProfile::gaussian_bump(vec![0.0], 0.0, 1.0).is_err());
        assert!(DensityProfile::constant_bump(vec![0.0], 1.0, -1.0).is_err());
        assert!(TestFunction::cosine_bump(vec![0.0], -1.0, 1.0).is_err());
    }
}
