//! Scalar abstraction so the math kernels work for any IEEE float width.
//!
//! Everything downstream of the tensor layer is written against this trait;
//! the crate root exports f64-backed aliases, which is what training and the
//! CLI use (gradient checks want the full 64-bit mantissa).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for converting an f64 literal into the scalar type.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal not representable in scalar type")
}
