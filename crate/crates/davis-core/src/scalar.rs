//! Scalar abstractions for the numeric kernels.
//!
//! Two layers:
//!
//! * [`Scalar`] is the minimal ordered-field interface. It is satisfied by
//!   `f32`/`f64` *and* by exact types such as `num_rational::BigRational`,
//!   which is what lets the simplex kernel in [`crate::lp`] re-run a
//!   degenerate pivot sequence in exact arithmetic.
//! * [`Real`] adds the transcendental operations (`ln`, `exp`, `powf`, ...)
//!   needed by the utility-maximization and Monte-Carlo code. Only `f32` and
//!   `f64` qualify.
//!
//! Concrete `f64` aliases for the main types live at the crate root.

use num_traits::{Float, FromPrimitive, Num, NumAssign, Signed};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Ordered field with sign queries: the arithmetic the LP kernel needs.
pub trait Scalar: Num + NumAssign + Signed + PartialOrd + Clone + Debug {}

impl<T> Scalar for T where T: Num + NumAssign + Signed + PartialOrd + Clone + Debug {}

/// Floating-point scalar for the analytic solvers and simulators.
pub trait Real:
    Scalar + Float + FromPrimitive + Display + Sum + Send + Sync + Copy + 'static
{
    /// Converts an `f64` literal; panics on values not representable (never
    /// happens for the finite constants used in this crate).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// `x` as `Self`, for state counts and grid sizes.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits in float")
    }
}

impl<T> Real for T where
    T: Scalar + Float + FromPrimitive + Display + Sum + Send + Sync + Copy + 'static
{
}
