use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the solvers are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    /// Absolute tolerance `v`, floored at a few ulps of one so that
    /// tolerances written for `f64` stay meaningful in `f32`.
    fn tol(v: f64) -> Self {
        Self::lit(v).max(Self::epsilon() * Self::lit(8.0))
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Positive part `max(x, 0)`.
    fn pos(self) -> Self {
        self.max(Self::zero())
    }

    /// Negative part `x^- = max(-x, 0)`.
    fn neg_part(self) -> Self {
        (-self).max(Self::zero())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `max |a_i - b_i|` over two equally long slices.
pub fn sup_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts() {
        assert_eq!(2.0f64.neg_part(), 0.0);
        assert_eq!((-2.0f64).neg_part(), 2.0);
        assert_eq!((-2.0f64).pos(), 0.0);
        assert!(f32::tol(1e-12) > 0.0);
        assert!(f32::tol(1e-12) >= f32::EPSILON);
        assert_eq!(f64::tol(1e-3), 1e-3);
    }

    #[test]
    fn sup_distance_basic() {
        assert_eq!(sup_distance(&[1.0, 2.0, 3.0], &[1.0, 2.5, 2.0]), 1.0);
    }
}
