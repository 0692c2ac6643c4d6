//! Symbolic jet-bundle calculus with numeric differential invariants.
//!
//! The crate revolves around a trivial fibered line bundle over the first
//! jet space of curves in an `m`-dimensional manifold. Bundle automorphisms
//! `(x, y) -> (phi(x), psi(x, y))` act on Lagrangian densities, and the
//! question "are two Lagrangians related by such a map?" is attacked with
//! two complementary tools:
//!
//! * prolonged vector fields spanning distributions whose generic rank is
//!   estimated numerically ([`distribution`]), and
//! * scalar invariants built from the velocity Hessian of a Lagrangian
//!   ([`invariants`], [`equivalence`]).
//!
//! Everything symbolic is carried by the small exact-rational expression
//! tree in [`expr`]; everything numeric is generic over the floating-point
//! scalar through the [`Real`] trait, with `f64` as the working default.

pub mod distribution;
pub mod equivalence;
pub mod expr;
pub mod invariants;
pub mod jet;
pub mod prolong;
pub mod testsupport;

/// Floating-point scalar used for numeric evaluation.
///
/// Implemented for `f32` and `f64`. Linear-algebra heavy routines add a
/// `nalgebra::RealField` bound on top of this where they need it.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossy conversion from `f64` literals and tolerances.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts into every Real scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Default numeric scalar for the command-line front end and the tests.
pub type Scalar = f64;

pub use expr::{Binding, EvalError, Expr, ParseError, Symbol};
pub use invariants::{HessianAtPoint, InvariantValue, J1Point, Lagrangian};
pub use jet::{JetCoordinateSystem, JetFunction, JetPoint, MultiIndex};

/// Number of coordinates on the order-two jet space of the line bundle
/// over curve one-jets: base slots plus fiber slots through order two.
pub fn j2q_dimension(m: usize) -> usize {
    2 * m * m + 7 * m + 4
}
