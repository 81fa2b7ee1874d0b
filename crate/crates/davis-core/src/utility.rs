//! Utility functions on the positive half-line.
//!
//! Two constant-relative-risk-aversion families are provided: logarithmic
//! utility and power utility `x^gamma / gamma` with `gamma < 1`, `gamma != 0`.
//! Wealth below zero is mapped to negative infinity, wealth exactly zero to
//! `inf U`, so objective evaluations stay total and the optimizers can rely
//! on IEEE semantics instead of option types.
//!
//! Both families satisfy the Inada conditions (`U'(0+) = +inf`,
//! `U'(inf) = 0`) and have asymptotic elasticity strictly below one, which is
//! what the duality machinery in [`crate::optim`] assumes.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Utility<F> {
    /// `U(x) = ln x`.
    Log,
    /// `U(x) = x^gamma / gamma`, `gamma < 1`, `gamma != 0`.
    Power { gamma: F },
}

/// Asymptotic-elasticity report: closed-form limit of `x U'(x) / U(x)`
/// together with sampled values of the ratio at large wealth levels.
#[derive(Debug, Clone)]
pub struct ElasticityReport<F> {
    pub limit: F,
    pub samples: Vec<(F, F)>,
    pub reasonable: bool,
}

impl<F: Real> Utility<F> {
    pub fn log() -> Self {
        Utility::Log
    }

    pub fn power(gamma: F) -> Result<Self> {
        if !(gamma < F::one()) || gamma == F::zero() || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "power exponent must be finite, nonzero and < 1, got {gamma}"
            )));
        }
        Ok(Utility::Power { gamma })
    }

    /// `U(x)` extended to all of the real line: `-inf` for `x < 0`,
    /// `inf U` for `x = 0`.
    pub fn evaluate(&self, x: F) -> F {
        if x < F::zero() {
            return F::neg_infinity();
        }
        match *self {
            Utility::Log => {
                if x == F::zero() {
                    F::neg_infinity()
                } else {
                    x.ln()
                }
            }
            Utility::Power { gamma } => {
                if x == F::zero() {
                    if gamma > F::zero() {
                        F::zero()
                    } else {
                        F::neg_infinity()
                    }
                } else {
                    x.powf(gamma) / gamma
                }
            }
        }
    }

    /// `U'(x)`; `+inf` for `x <= 0` (Inada boundary).
    pub fn marginal(&self, x: F) -> F {
        if x <= F::zero() {
            return F::infinity();
        }
        match *self {
            Utility::Log => x.recip(),
            Utility::Power { gamma } => x.powf(gamma - F::one()),
        }
    }

    /// `U''(x)` for interior `x > 0`; `-inf` at the boundary.
    pub fn curvature(&self, x: F) -> F {
        if x <= F::zero() {
            return F::neg_infinity();
        }
        match *self {
            Utility::Log => -(x * x).recip(),
            Utility::Power { gamma } => (gamma - F::one()) * x.powf(gamma - F::of(2.0)),
        }
    }

    /// Inverse marginal utility `I = (U')^{-1}`. `I(0) = +inf`; negative
    /// arguments are a domain error.
    pub fn inverse_marginal(&self, y: F) -> Result<F> {
        if y < F::zero() {
            return Err(Error::InvalidArgument(format!(
                "inverse marginal utility needs y >= 0, got {y}"
            )));
        }
        if y == F::zero() {
            return Ok(F::infinity());
        }
        Ok(match *self {
            Utility::Log => y.recip(),
            Utility::Power { gamma } => y.powf((gamma - F::one()).recip()),
        })
    }

    /// Convex conjugate `V(y) = sup_{x>0} (U(x) - xy)`, `y > 0`.
    ///
    /// Closed forms: `V(y) = -1 - ln y` for Log and
    /// `V(y) = (1 - gamma)/gamma * y^{gamma/(gamma-1)}` for Power.
    pub fn conjugate(&self, y: F) -> Result<F> {
        if y <= F::zero() || !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "conjugate is evaluated on y > 0, got {y}"
            )));
        }
        Ok(match *self {
            Utility::Log => -F::one() - y.ln(),
            Utility::Power { gamma } => {
                let expo = gamma / (gamma - F::one());
                (F::one() - gamma) / gamma * y.powf(expo)
            }
        })
    }

    /// Closed-form limit of the elasticity `x U'(x) / U(x)` as `x -> inf`.
    pub fn elasticity_limit(&self) -> F {
        match *self {
            Utility::Log => F::zero(),
            Utility::Power { gamma } => gamma,
        }
    }

    /// Evaluates the elasticity ratio at `x = 10^3 .. 10^8` and reports
    /// whether the asymptotic elasticity is strictly below one (always true
    /// for these families).
    pub fn check_reasonable_elasticity(&self) -> ElasticityReport<F> {
        let samples = (3..=8)
            .map(|k| {
                let x = F::of(10f64.powi(k));
                (x, x * self.marginal(x) / self.evaluate(x))
            })
            .collect();
        let limit = self.elasticity_limit();
        ElasticityReport { limit, samples, reasonable: limit < F::one() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pinned_values() {
        let log = Utility::<f64>::log();
        assert_eq!(log.evaluate(1.0), 0.0);
        assert_eq!(log.evaluate(-1.0), f64::NEG_INFINITY);
        assert_eq!(log.evaluate(0.0), f64::NEG_INFINITY);
        assert!((log.conjugate(1.0).unwrap() + 1.0).abs() < 1e-15); // -1 - ln 1
        assert!((log.inverse_marginal(2.0).unwrap() - 0.5).abs() < 1e-15);

        let pow = Utility::<f64>::power(0.5).unwrap();
        assert!((pow.evaluate(4.0) - 4.0).abs() < 1e-15); // 4^0.5 / 0.5
        assert_eq!(pow.evaluate(-1e-9), f64::NEG_INFINITY);
        assert_eq!(pow.evaluate(0.0), 0.0);
        assert!((pow.conjugate(1.0).unwrap() - 1.0).abs() < 1e-15);

        let neg = Utility::power(-1.0).unwrap();
        assert_eq!(neg.evaluate(0.0), f64::NEG_INFINITY);
        assert!((neg.evaluate(2.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_exponents() {
        assert!(Utility::<f64>::power(0.0).is_err());
        assert!(Utility::<f64>::power(1.0).is_err());
        assert!(Utility::<f64>::power(1.5).is_err());
        assert!(Utility::<f64>::power(f64::NAN).is_err());
    }

    #[test]
    fn conjugate_domain_errors() {
        let log = Utility::<f64>::log();
        assert!(log.conjugate(0.0).is_err());
        assert!(log.conjugate(-1.0).is_err());
        assert!(log.inverse_marginal(-0.1).is_err());
        assert_eq!(log.inverse_marginal(0.0).unwrap(), f64::INFINITY);
    }

    /// Grid-search oracle for the conjugate: V(y) must dominate U(x) - xy on
    /// a dense grid and be attained at the stationary point x = I(y).
    #[test]
    fn conjugate_matches_grid_oracle() {
        for u in [Utility::log(), Utility::power(0.5).unwrap(), Utility::power(-1.0).unwrap()] {
            for &y in &[0.25, 0.5, 1.0, 2.0, 7.5] {
                let v = u.conjugate(y).unwrap();
                let mut best = f64::NEG_INFINITY;
                let mut x = 1e-6;
                while x < 1e4 {
                    best = best.max(u.evaluate(x) - x * y);
                    x *= 1.01;
                }
                assert!(v >= best - 1e-9, "V({y}) = {v} < grid max {best} for {u:?}");
                let at = u.inverse_marginal(y).unwrap();
                let attained = u.evaluate(at) - at * y;
                assert!((v - attained).abs() < 1e-10 * (1.0 + v.abs()));
            }
        }
    }

    /// For power utility, U'((1-b)x) * x = (1-b)^{gamma-1} * gamma * U(x);
    /// for log, U'((1-b)x) * x is the constant 1/(1-b). These identities are
    /// what makes marginal utility at a fraction of wealth controllable by
    /// utility at full wealth.
    #[test]
    fn marginal_at_wealth_fraction_identity() {
        let b = 0.5f64;
        let pow = Utility::power(0.3).unwrap();
        let log = Utility::<f64>::log();
        let mut x = 0.125;
        while x < 1e6 {
            let lhs = pow.marginal((1.0 - b) * x) * x;
            let rhs = (1.0 - b).powf(0.3 - 1.0) * 0.3 * pow.evaluate(x);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            let c = log.marginal((1.0 - b) * x) * x;
            assert!((c - 1.0 / (1.0 - b)).abs() < 1e-12);
            x *= 3.7;
        }
    }

    #[test]
    fn elasticity_reports() {
        let log = Utility::<f64>::log();
        let rep = log.check_reasonable_elasticity();
        assert!(rep.reasonable);
        assert_eq!(rep.limit, 0.0);
        // Sampled ratios decrease toward the limit.
        for w in rep.samples.windows(2) {
            assert!(w[1].1 < w[0].1);
        }

        let pow = Utility::<f64>::power(0.5).unwrap();
        let rep = pow.check_reasonable_elasticity();
        assert_eq!(rep.limit, 0.5);
        for (_, r) in rep.samples {
            assert!((r - 0.5).abs() < 1e-12);
        }
    }

    proptest! {
        /// Fenchel-Young: U(x) <= V(y) + xy for all x > 0, y > 0.
        #[test]
        fn fenchel_young(x in 1e-3..1e3f64, y in 1e-3..1e3f64, gamma in -3.0..0.99f64) {
            let us = if gamma == 0.0 {
                vec![Utility::log()]
            } else {
                vec![Utility::log(), Utility::power(gamma).unwrap()]
            };
            for u in us {
                let gap = u.conjugate(y).unwrap() + x * y - u.evaluate(x);
                prop_assert!(gap >= -1e-9 * (1.0 + gap.abs()), "gap = {gap} for {u:?}");
            }
        }

        /// I and U' are inverse bijections on the positive half-line.
        #[test]
        fn inverse_marginal_round_trip(x in 1e-4..1e4f64, gamma in -3.0..0.99f64) {
            let us = if gamma == 0.0 {
                vec![Utility::log()]
            } else {
                vec![Utility::log(), Utility::power(gamma).unwrap()]
            };
            for u in us {
                let y = u.marginal(x);
                let back = u.inverse_marginal(y).unwrap();
                prop_assert!((back - x).abs() < 1e-8 * x.max(1.0));
            }
        }
    }
}
