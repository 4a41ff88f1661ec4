//! Scalar abstractions shared by the algebraic and numerical layers.
//!
//! The combinatorial parts of the crate (exterior algebra, coboundary,
//! interpolation of polynomial forms) only need ring operations and work over
//! integers and rationals as well as floats. Everything that solves, measures
//! or reconstructs needs a real field.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::Neg;

use num_traits::{Float, FromPrimitive, Num, NumAssign};

/// Ring-like scalar: integers, rationals and floats.
pub trait Scalar:
    Copy + Debug + PartialEq + Num + NumAssign + Neg<Output = Self> + Send + Sync + 'static
{
    fn from_i64(v: i64) -> Self;
}

impl Scalar for i64 {
    fn from_i64(v: i64) -> Self {
        v
    }
}

impl Scalar for i128 {
    fn from_i64(v: i64) -> Self {
        v as i128
    }
}

impl Scalar for f32 {
    fn from_i64(v: i64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn from_i64(v: i64) -> Self {
        v as f64
    }
}

impl Scalar for num_rational::Ratio<i64> {
    fn from_i64(v: i64) -> Self {
        num_rational::Ratio::from_integer(v)
    }
}

/// Floating point scalar used by assembly and the iterative solvers.
pub trait Real: Scalar + Float + FromPrimitive + Sum + Display + LowerExp {
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}
