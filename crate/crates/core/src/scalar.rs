//! Floating-point scalar abstraction shared by containers, transforms and metrics.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type (rounding for `f32`).
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Raises a clip floor to something the type can actually resolve near 1.
    fn clip_floor(eps: Self) -> Self {
        eps.max(Self::epsilon())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
