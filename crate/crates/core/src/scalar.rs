//! Floating-point abstraction used by the numeric core.
//!
//! Everything that touches network parameters or stacked inputs is generic
//! over [`Scalar`]. Matrix products go through ndarray, which dispatches to
//! packed GEMM kernels for `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short name written into reports ("f32" / "f64").
    const NAME: &'static str;

    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;

    fn to_f32_lossy(self) -> f32;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self
    }
}
