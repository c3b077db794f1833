//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Element type of tensors and model arithmetic: f32 or f64.
///
/// Shipped artifacts are always f32 (the container format is F32-only);
/// the f64 instantiation exists for high-precision cross-checks in tests.
pub trait Element:
    Float + NumAssign + NumCast + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    fn as_f64(self) -> f64 {
        NumCast::from(self).expect("finite scalar converts to f64")
    }

    /// Narrowing conversion from f64 (rounds to nearest for f32).
    fn of(v: f64) -> Self {
        NumCast::from(v).expect("f64 converts to scalar")
    }
}

impl Element for f32 {}
impl Element for f64 {}
