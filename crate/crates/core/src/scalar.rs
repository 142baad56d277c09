//! Scalar abstraction: the whole pipeline is generic over `f32`/`f64`.
//!
//! Training runs at `f32` so checkpoints round-trip bit-exactly, while
//! verification (brute-force solver oracles, finite-difference gradient
//! checks) runs at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable throughout the pipeline.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal/value into the working scalar type.
#[inline]
pub fn fr<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 -> scalar conversion")
}

/// Converts the working scalar into `f64` (for logging and metrics).
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar -> f64 conversion")
}
