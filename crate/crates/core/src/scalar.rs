//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of every tensor and model in this crate.
///
/// All math is generic over `Scalar`; the shipped pipelines instantiate it
/// with `f64` (the default type parameter everywhere), which is what the
/// tolerance contracts of the public operations are stated for.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Send + Sync + Debug + Display + 'static
{
    /// Shorthand for converting an `f64` literal into the scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    /// Lossy conversion back to `f64` (exact when `Self = f64`).
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Send
        + Sync
        + Debug
        + Display
        + 'static
{
}
