//! Marginal-utility pricing of contingent claims under random endowments.
//!
//! The crate solves one-period expected-utility problems on finite state
//! spaces (primal and dual form), certifies superreplication and its
//! uniqueness, and computes the interval of marginal-utility-based prices of
//! a claim by several independent routes so they can be cross-validated:
//!
//! * normalized dual martingale measures ([`davis`]),
//! * one-sided supergradients of the value function ([`davis`]),
//! * a directional-derivative linear program ([`davis`]),
//! * endpoint formulas combining a dual density with envelope slopes of the
//!   endowment perturbation, which also cover Brownian models where the
//!   candidate deflator is a strict local martingale ([`brownian`]).
//!
//! A truncation laboratory around a countable-state market whose dual
//! optimizer escapes every sigma-additive measure lives in [`davis::sweep`].
//!
//! Numeric code is generic over the scalar type via [`scalar::Real`]; the
//! linear-programming kernel is generic over the weaker [`scalar::Scalar`]
//! so it can fall back to exact rational pivoting. The aliases below fix
//! `f64` for ordinary use.

pub mod brownian;
pub mod davis;
pub mod error;
pub mod lp;
pub mod market;
pub mod numerics;
pub mod optim;
pub mod scalar;
pub mod superrep;
pub mod utility;

pub use error::{Error, Result};

/// `f64` market.
pub type Market64 = market::FiniteMarket<f64>;
/// `f64` utility.
pub type Utility64 = utility::Utility<f64>;
/// `f64` primal solution.
pub type Primal64 = optim::PrimalSolution<f64>;
/// `f64` dual solution.
pub type Dual64 = optim::DualSolution<f64>;
/// `f64` price interval.
pub type Interval64 = davis::DavisInterval<f64>;
