//! Scalar abstraction shared by the numerical kernels.
//!
//! Everything that operates on pixel values, descriptors, feature matrices
//! or model parameters is generic over [`Real`], implemented for `f32` and
//! `f64`. Geometry (UTM coordinates) and ROC bookkeeping stay in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to any Real")
    }

    #[inline]
    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}
