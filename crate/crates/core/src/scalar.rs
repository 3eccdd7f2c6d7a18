//! Scalar abstraction shared by the geometric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point type usable by the geometry and path-geometry code.
///
/// Implemented for `f32` and `f64`. The optimization layers (cone solver,
/// stretching, speed planning) are written against `f64` because their
/// tolerances are below single-precision resolution.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Absolute tolerance for degeneracy tests (collinearity, vertex grazing).
    fn geom_eps() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    #[inline]
    fn geom_eps() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    #[inline]
    fn geom_eps() -> Self {
        1e-6
    }
}
