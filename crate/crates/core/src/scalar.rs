//! Floating-point abstraction shared by the numeric pipelines.
//!
//! The HMM decoder, correlation statistics and the recurrent classifier are
//! written against [`Scalar`] so they run unchanged on `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(2π) / 2`
pub(crate) fn half_ln_two_pi<T: Scalar>() -> T {
    T::of(0.918_938_533_204_672_8)
}

/// Log density of a normal distribution.
pub fn normal_log_pdf<T: Scalar>(x: T, mean: T, stddev: T) -> T {
    let z = (x - mean) / stddev;
    -(z * z) / T::of(2.0) - stddev.ln() - half_ln_two_pi()
}
