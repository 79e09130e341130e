//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the numerical core is generic over (`f32` or `f64`).
pub trait Real:
    RenormBounds
    + Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Overflow guard constants for the simulated field, per precision.
pub trait RenormBounds {
    /// Largest drift-free site value tolerated before rescaling.
    const RENORM_THRESHOLD: f64;
    /// Rescaling factor is `10^-RENORM_LOG10`.
    const RENORM_LOG10: f64;
}

impl RenormBounds for f64 {
    const RENORM_THRESHOLD: f64 = 1e200;
    const RENORM_LOG10: f64 = 100.0;
}

impl RenormBounds for f32 {
    const RENORM_THRESHOLD: f64 = 1e25;
    const RENORM_LOG10: f64 = 12.0;
}
