use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the numerical core is generic over.
///
/// Implemented for `f32` and `f64`. The experiment pipeline runs in `f64`;
/// `f32` is supported for the math kernels so they can be reused in
/// lower-precision settings.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `log(max(p, PROB_FLOOR))`, returning also whether the floor was active.
#[inline]
pub fn clamped_ln<T: Scalar>(p: T) -> (T, bool) {
    let floor = T::lit(PROB_FLOOR);
    if p < floor {
        (floor.ln(), true)
    } else {
        (p.ln(), false)
    }
}
