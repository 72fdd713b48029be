//! Scalar abstraction for geometry code.
//!
//! Geometry (clouds, cameras, rendering, spatial search) is generic over
//! [`Real`], implemented for `f32` and `f64`. Probabilities are always `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar usable for point coordinates and camera math.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Orthonormality tolerance scaled to the precision of the type.
    fn rotation_tolerance() -> Self;
}

impl Real for f32 {
    fn rotation_tolerance() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn rotation_tolerance() -> Self {
        1e-9
    }
}
