//! Floating-point scalar abstraction: f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};
use rand::distributions::uniform::SampleUniform;

/// Element type for pools, models and the churn engine.
pub trait Scalar:
    Float
    + NumAssign
    + Sum
    + for<'a> Sum<&'a Self>
    + Debug
    + Display
    + ScalarOperand
    + LinalgScalar
    + SampleUniform
    + Send
    + Sync
    + 'static
{
    fn from_f64(value: f64) -> Self {
        Self::from(value).expect("f64 representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar representable as f64")
    }

    fn from_usize(value: usize) -> Self {
        Self::from(value).expect("usize representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
