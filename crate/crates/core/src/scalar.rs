use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar accepted by the matrix and integrator layers.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the provided impls.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
