//! Numeric scalar abstraction for the dynamic-programming core.
//!
//! The solver only needs ring operations, ordering and an absolute value, so
//! it runs unchanged over `f32`, `f64` and exact rationals. Floating types
//! carry tolerances; rationals compare exactly.

use std::fmt::Debug;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Num, Signed};

pub trait Scalar: Clone + PartialOrd + Num + Signed + Debug + Send + Sync + 'static {
    /// Absolute gap under which two action values count as tied.
    fn tie_tolerance() -> Self;

    /// Allowed deviation of a probability row sum from one.
    fn simplex_tolerance() -> Self;

    /// Rows whose sum deviates by less than this are renormalized at construction.
    fn renormalize_limit() -> Self;

    /// False for NaN and infinities; exact types are always finite.
    fn is_finite_value(&self) -> bool {
        true
    }
}

impl Scalar for f64 {
    fn tie_tolerance() -> Self {
        1e-9
    }
    fn simplex_tolerance() -> Self {
        1e-9
    }
    fn renormalize_limit() -> Self {
        1e-6
    }
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    fn tie_tolerance() -> Self {
        1e-5
    }
    fn simplex_tolerance() -> Self {
        1e-5
    }
    fn renormalize_limit() -> Self {
        1e-4
    }
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl<I> Scalar for Ratio<I>
where
    I: Integer + Signed + Clone + Debug + Send + Sync + 'static,
{
    fn tie_tolerance() -> Self {
        Ratio::from_integer(I::zero())
    }
    fn simplex_tolerance() -> Self {
        Ratio::from_integer(I::zero())
    }
    fn renormalize_limit() -> Self {
        Ratio::from_integer(I::zero())
    }
}

/// Sum of a slice in index order.
pub(crate) fn sum<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, v| acc + v.clone())
}

/// Dot product in index order.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}
