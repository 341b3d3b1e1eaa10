//! Floating-point scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating scalar the numeric kernels are generic over: `f32` or `f64`.
pub trait Scalar: Float + NumAssign + FromPrimitive + Debug + Display + Default + 'static {
    /// Lossy conversion from `f64`, for literals inside generic code.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant must convert to the scalar type")
    }
}

impl<T> Scalar for T where T: Float + NumAssign + FromPrimitive + Debug + Display + Default + 'static
{}
