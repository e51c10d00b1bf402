//! Floating-point scalar abstraction: every geometric and numeric kernel in
//! this crate is generic over [`Scalar`], instantiated as `f32` or `f64`.
//! The crate root exports `f64` aliases for the common types.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// IEEE 754 scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum<Self>
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Shorthand for pulling `f64` constants into generic code.
#[inline]
pub(crate) fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Sums `values` in ascending value order, so the result does not depend on
/// the order the addends were produced in. Used where bit-identical results
/// are required under input permutations.
pub(crate) fn sorted_sum<S: Scalar>(values: &mut [S]) -> S {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite addends"));
    let mut acc = S::zero();
    for &v in values.iter() {
        acc += v;
    }
    acc
}
