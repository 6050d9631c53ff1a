//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
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
    /// Lossy conversion from `f64`. Never fails for the supported types.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every supported scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("supported scalars convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
