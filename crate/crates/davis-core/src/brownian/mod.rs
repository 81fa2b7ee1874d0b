//! Monte-Carlo pipelines for Brownian market models whose candidate
//! deflator is a strict local martingale.
//!
//! The centerpiece is a stopped stochastic-exponential construction on the
//! horizon `[0, 1]`: two independent Brownian motions are time-changed by
//! the clock `s = -ln(1 - t)`, their exponentials are watched until one
//! hits a barrier (the deflator's own exponential falling to 1/2, or the
//! companion's rising to 2), and the singular drift `1/sqrt(1 - t)` is
//! switched off at that stopping time. The resulting terminal deflator has
//! mean strictly below its initial value, so claims on the non-traded
//! Brownian motion price to genuine intervals rather than points:
//!
//! * [`simulate_stochastic_exponential`] estimates the terminal deflator
//!   mean with confidence bounds,
//! * [`ds_stopped_drift`] reports the stopping-time statistics of the
//!   construction,
//! * [`example1_interval`] prices a bounded claim under a constant
//!   endowment, where the interval width has the closed form
//!   `(sup phi - inf phi) * (1 - E[Y_T] / Y_0)`,
//! * [`envelope_derivatives`] measures one-sided slopes of the perturbed
//!   infimum `eps -> inf_a (B(a) + eps phi(a))`,
//! * [`example2_interval`] combines the two into interval endpoints for a
//!   claim held against a non-replicable endowment,
//! * [`corrector_check`] verifies that scaling the base optimal strategy
//!   by `1 + eps * slope / inf B` is first-order optimal,
//! * [`lone_probe`] drives conditional prices toward `sup phi` with
//!   explicit measure changes late in the horizon.
//!
//! Everything here is `f64`. Paths are simulated in independent batches
//! with counter-split ChaCha streams and antithetic pairing, and batch
//! results are folded in a fixed order, so every report is bit-identical
//! for a given seed regardless of thread count.

mod corrector;
mod envelope;
mod intervals;
mod lone;
mod mc;
mod paths;

pub use corrector::{corrector_check, CorrectorConfig, CorrectorReport};
pub use envelope::{envelope_derivatives, ClaimFunction, EnvelopeFunctions, EnvelopeSlopes};
pub use intervals::{example1_interval, example2_interval, Example2Config, NuHatSpec};
pub use lone::{lone_probe, LoneProbeReport, ProbeValue};
pub use paths::{
    ds_drift_magnitude, ds_stopped_drift, simulate_stochastic_exponential, supermartingale_profile,
    CheckpointStat, DsStoppedSummary,
};

use crate::error::{Error, Result};

/// Drift specification for the traded asset's exponential deflator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    /// Constant market price of risk; the deflator is a true martingale.
    Constant(f64),
    /// The stopped singular drift `-1/sqrt(1 - t)` active until the first
    /// barrier hit; the deflator is a strict local martingale.
    DsStopped,
}

/// Time-discretized path model on `[0, horizon]`.
///
/// For [`LambdaSpec::Constant`] the grid is uniform in calendar time. For
/// [`LambdaSpec::DsStopped`] the horizon must be 1 and the grid is uniform
/// in the clock `s = -ln(1 - t)`, so steps refine geometrically toward
/// `t = 1` and the singular drift integrals have closed forms per step;
/// the grid never touches `t = 1` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathModel {
    pub horizon: f64,
    /// Steps per clock block (see [`paths`] internals); also the uniform
    /// step count for constant-drift models.
    pub n_steps: usize,
    pub lambda: LambdaSpec,
    pub sigma: f64,
    pub seed: u64,
}

impl PathModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if self.n_steps < 16 {
            return Err(Error::InvalidArgument(format!(
                "need at least 16 time steps, got {}",
                self.n_steps
            )));
        }
        if matches!(self.lambda, LambdaSpec::DsStopped) && self.horizon != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "the stopped singular drift is built on horizon 1, got {}",
                self.horizon
            )));
        }
        if let LambdaSpec::Constant(l) = self.lambda {
            if !l.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite drift {l}")));
            }
        }
        Ok(())
    }
}

/// Terminal statistics of a simulated deflator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeflatorStats {
    /// Initial value of the deflator.
    pub y0: f64,
    /// Monte-Carlo estimate of the terminal mean.
    pub e_yt: f64,
    /// 95% confidence halfwidth of `e_yt`.
    pub ci_halfwidth: f64,
    pub n_paths: usize,
}

impl DeflatorStats {
    /// The terminal mean of a nonnegative supermartingale cannot exceed the
    /// initial value; a violation beyond three confidence halfwidths is a
    /// simulation bug, not noise.
    pub(crate) fn new(y0: f64, e_yt: f64, ci_halfwidth: f64, n_paths: usize) -> Result<Self> {
        if !e_yt.is_finite() || !ci_halfwidth.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite deflator statistics: mean {e_yt}, ci {ci_halfwidth}"
            )));
        }
        if e_yt > y0 + 3.0 * ci_halfwidth {
            return Err(Error::Numeric(format!(
                "terminal deflator mean {e_yt} exceeds the initial value {y0} by more than \
                 three confidence halfwidths ({ci_halfwidth})"
            )));
        }
        Ok(DeflatorStats { y0, e_yt, ci_halfwidth, n_paths })
    }
}

fn check_n_paths(n_paths: usize) -> Result<()> {
    if n_paths < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "Monte-Carlo estimates need at least 10000 paths, got {n_paths}"
        )));
    }
    Ok(())
}
