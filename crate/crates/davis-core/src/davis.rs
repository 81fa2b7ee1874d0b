//! Price intervals for a contingent claim held alongside a random
//! endowment, computed by routes independent enough to cross-check each
//! other.
//!
//! A price `p` for the claim `phi` is acceptable to an investor with
//! endowment `B` when an infinitesimal position in the claim, bought at
//! `p`, cannot raise the maximal expected utility. The acceptable prices
//! form a nonempty compact interval; on a finite state space it collapses
//! to the single number `E[Y phi] / E[Y]` with `Y` the optimal dual
//! density. Three estimators are implemented:
//!
//! * [`davis_interval_finite`]: the normalized dual pairing.
//! * [`interval_via_supergradient`]: one-sided difference quotients of the
//!   bivariate value function `u(eps, x)` (endowment perturbed by `eps`
//!   units of the claim and `x` in cash), normalized by the cash
//!   derivative. Where the value function is smooth this reproduces the
//!   pairing; where it is kinked it honestly reports a nondegenerate
//!   interval.
//! * [`interval_via_finite_difference`]: central differences, blind to
//!   kinks, kept as a cheap third opinion.
//!
//! [`interval_derb`] assembles interval endpoints from dual statistics plus
//! one-sided derivatives of a riskless-floor envelope; on finite markets
//! the envelope terms vanish and the formula degenerates to the pairing,
//! while simulation front ends feed it a nonzero mass defect (see
//! [`crate::brownian`]).
//!
//! The truncation experiments showing how all of this degrades on countable
//! state spaces live in [`sweep`].

pub mod sweep;

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::market::FiniteMarket;
use crate::numerics::{central_derivative, one_sided_derivative, DerivEstimate, Side};
use crate::optim::{solve_dual, solve_primal, SolverOpts};
use crate::scalar::Real;
use crate::utility::Utility;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceMethod {
    /// Normalized pairing with the exact dual density.
    DualSweep,
    /// One-sided supergradient quotients of the value function.
    Supergradient,
    /// Endpoint formula from dual statistics and envelope derivatives.
    DerbFormula,
    /// Central finite differences of the value function.
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct DavisInterval<F> {
    pub p_low: F,
    pub p_high: F,
    pub method: PriceMethod,
    /// Marginal utility of cash used to normalize the endpoints (the dual
    /// mass, including any part not carried by a density).
    pub y_b: F,
    /// Named residuals, stencil sizes and raw estimates behind the result.
    pub diagnostics: BTreeMap<String, F>,
}

impl<F: Real> DavisInterval<F> {
    pub fn width(&self) -> F {
        self.p_high - self.p_low
    }

    pub fn midpoint(&self) -> F {
        (self.p_low + self.p_high) / F::of(2.0)
    }

    fn singleton(p: F, method: PriceMethod, y_b: F, diagnostics: BTreeMap<String, F>) -> Self {
        DavisInterval { p_low: p, p_high: p, method, y_b, diagnostics }
    }
}

/// Feasible claim-adjustment directions at a fixed perturbation scale: a
/// position change `delta` is admitted at scale `eps` when the optimal
/// wealth keeps every state solvent after adding `eps * (phi + delta dS)`.
/// The admitted set shrinks as `eps` grows.
#[derive(Debug, Clone)]
pub struct PerturbationCone<F> {
    pub phi: Vec<F>,
    pub eps: F,
}

impl<F: Real> PerturbationCone<F> {
    pub fn new(phi: Vec<F>, eps: F) -> Result<Self> {
        if !(eps > F::zero()) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "perturbation scale must be positive, got {eps}"
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("claim direction must be finite".into()));
        }
        Ok(PerturbationCone { phi, eps })
    }

    /// Whether `wealth + eps * (phi + delta * dS)` stays nonnegative in
    /// every state.
    pub fn admits(&self, m: &FiniteMarket<F>, wealth: &[F], delta: F) -> bool {
        wealth
            .iter()
            .zip(self.phi.iter().zip(&m.ds))
            .all(|(w, (f, d))| *w + self.eps * (*f + delta * *d) >= F::zero())
    }
}

fn check_direction<F: Real>(m: &FiniteMarket<F>, v: &[F], what: &str) -> Result<()> {
    if v.len() != m.n_states() {
        return Err(Error::InvalidArgument(format!(
            "{what} has {} states, market has {}",
            v.len(),
            m.n_states()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} must be finite in every state")));
    }
    Ok(())
}

fn with_endowment<F: Real>(m: &FiniteMarket<F>, b: &[F]) -> Result<FiniteMarket<F>> {
    check_direction(m, b, "endowment")?;
    FiniteMarket::new(m.probs.clone(), m.ds.clone(), b.to_vec(), None)
}

/// Maximal expected utility with the endowment replaced by `b`.
pub fn max_utility<F: Real>(m: &FiniteMarket<F>, u: &Utility<F>, b: &[F]) -> Result<F> {
    let shifted = with_endowment(m, b)?;
    Ok(solve_primal(&shifted, u, &SolverOpts::default())?.value)
}

/// Runs a fallible probe through the numerics stencils, which only accept
/// plain closures; the first error is parked in a cell and re-raised after
/// the stencil returns.
pub(crate) fn probe_derivative<F: Real>(
    probe: &dyn Fn(F) -> Result<F>,
    f_at: F,
    side: Option<Side>,
    hs: &[F],
) -> Result<DerivEstimate<F>> {
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let wrapped = |x: F| -> F {
        match probe(x) {
            Ok(v) => v,
            Err(e) => {
                let mut slot = failure.borrow_mut();
                if slot.is_none() {
                    *slot = Some(e);
                }
                F::nan()
            }
        }
    };
    let est = match side {
        Some(s) => one_sided_derivative(wrapped, F::zero(), f_at, s, hs),
        None => central_derivative(wrapped, F::zero(), hs),
    };
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(est),
    }
}

/// Exact price on a finite market: the dual density integrates the claim,
/// normalized by its total mass. A true singleton here because the dual
/// optimizer is an ordinary density with nothing escaping the state space.
pub fn davis_interval_finite<F: Real>(
    m: &FiniteMarket<F>,
    u: &Utility<F>,
    b: &[F],
    phi: &[F],
) -> Result<DavisInterval<F>> {
    check_direction(m, phi, "claim")?;
    let mkt = with_endowment(m, b)?;
    let d = solve_dual(&mkt, u, &SolverOpts::default(), F::zero())?;
    if !(d.total_mass > F::zero()) || !d.total_mass.is_finite() {
        return Err(Error::Numeric(format!("dual mass {} unusable for pricing", d.total_mass)));
    }
    let pairing: F =
        mkt.probs.iter().zip(d.density.iter().zip(phi)).map(|(p, (y, f))| *p * *y * *f).sum();
    let price = pairing / d.total_mass;
    let mut diag = BTreeMap::new();
    diag.insert("martingale_residual".into(), d.martingale_residual);
    diag.insert("pairing".into(), pairing);
    Ok(DavisInterval::singleton(price, PriceMethod::DualSweep, d.total_mass, diag))
}

/// Value of the best utility-gradient direction built from the claim plus a
/// feasible position adjustment, for a given dual density and optimal
/// wealth. The program maximizes `delta * E[Y dS]` over adjustments that
/// keep zero-wealth states solvent; with strictly positive wealth the
/// constraint set is the whole line, so boundedness is exactly the
/// martingale property of the density and the value is `E[Y phi]`.
pub fn directional_derivative_from_density<F: Real>(
    m: &FiniteMarket<F>,
    density: &[F],
    wealth: &[F],
    phi: &[F],
) -> Result<F> {
    check_direction(m, phi, "claim")?;
    check_direction(m, density, "density")?;
    check_direction(m, wealth, "wealth")?;
    let residual: F =
        m.probs.iter().zip(density.iter().zip(&m.ds)).map(|(p, (y, d))| *p * *y * *d).sum();
    let scale: F = m
        .probs
        .iter()
        .zip(density.iter().zip(&m.ds))
        .map(|(p, (y, d))| *p * *y * d.abs())
        .sum::<F>()
        + F::one();
    if residual.abs() > F::of(1e-8) * scale {
        let ray = if residual > F::zero() { "+" } else { "-" };
        return Err(Error::Numeric(format!(
            "direction program unbounded along the ray delta -> {ray}infinity: \
             martingale residual {residual} says the density is not a valid dual optimizer"
        )));
    }
    // Adjustment cone from zero-wealth states; empty only if such a state
    // loses on the claim in a direction no trade can repair.
    let mut lo = F::neg_infinity();
    let mut hi = F::infinity();
    let floor = F::of(1e-14);
    for ((w, f), d) in wealth.iter().zip(phi).zip(&m.ds) {
        if *w > floor {
            continue;
        }
        if *d > F::zero() {
            lo = lo.max(-*f / *d);
        } else if *d < F::zero() {
            hi = hi.min(-*f / *d);
        } else if *f < F::zero() {
            return Err(Error::Numeric(
                "no admissible adjustment: a zero-wealth state loses on the claim and has no \
                 traded increment to trade against"
                    .into(),
            ));
        }
    }
    if lo > hi {
        return Err(Error::Numeric(format!(
            "no admissible adjustment: zero-wealth states force the position into the empty \
             interval ({lo}, {hi})"
        )));
    }
    Ok(m.probs.iter().zip(density.iter().zip(phi)).map(|(p, (y, f))| *p * *y * *f).sum())
}

/// Solves the primal and dual for endowment `b`, then evaluates the
/// directional derivative of the value function toward the claim.
pub fn directional_derivative_lp<F: Real>(
    m: &FiniteMarket<F>,
    u: &Utility<F>,
    b: &[F],
    phi: &[F],
) -> Result<F> {
    let mkt = with_endowment(m, b)?;
    let opts = SolverOpts::default();
    let p = solve_primal(&mkt, u, &opts)?;
    let d = solve_dual(&mkt, u, &opts, F::zero())?;
    directional_derivative_from_density(&mkt, &d.density, &p.wealth, phi)
}

/// Default two-sided perturbation sizes for irrelevance testing.
pub fn default_eps_grid<F: Real>() -> Vec<F> {
    vec![F::of(0.1), F::of(-0.1), F::of(0.01), F::of(-0.01), F::of(1e-3), F::of(-1e-3)]
}

#[derive(Debug, Clone)]
pub struct IrrelevanceReport<F> {
    pub irrelevant: bool,
    pub base_value: F,
    /// `(eps, value, allowance)` for every probe evaluated.
    pub probes: Vec<(F, F, F)>,
    /// Some grid entries had to shrink to keep the endowment solvent.
    pub shrunk: bool,
    /// Largest `value - base - allowance` observed; nonpositive when the
    /// direction is irrelevant.
    pub max_excess: F,
}

/// Whether adding `eps * r` to the endowment can raise the value function,
/// probed at the sizes in `eps_grid` (two-sided; see [`default_eps_grid`]).
/// The allowance `1e-9 + 1e-6 eps^2` absorbs solver tolerance and the
/// curvature a genuinely irrelevant direction is permitted to show. Grid
/// entries that make the endowment insolvent are halved until solvent.
pub fn irrelevance_report<F: Real>(
    m: &FiniteMarket<F>,
    u: &Utility<F>,
    b: &[F],
    r: &[F],
    eps_grid: &[F],
) -> Result<IrrelevanceReport<F>> {
    check_direction(m, r, "direction")?;
    if eps_grid.is_empty() || eps_grid.iter().all(|e| *e == F::zero()) {
        return Err(Error::InvalidArgument("irrelevance grid needs a nonzero entry".into()));
    }
    let base_value = max_utility(m, u, b)?;
    let mut probes = Vec::new();
    let mut shrunk = false;
    let mut max_excess = F::neg_infinity();
    for &eps0 in eps_grid {
        if eps0 == F::zero() || !eps0.is_finite() {
            continue;
        }
        let mut eps = eps0;
        let mut guard = 0;
        while b.iter().zip(r).any(|(bb, rr)| !(*bb + eps * *rr > F::zero())) {
            eps /= F::of(2.0);
            shrunk = true;
            guard += 1;
            if guard > 200 {
                return Err(Error::Numeric(format!(
                    "could not shrink eps = {eps0} to a solvent perturbation"
                )));
            }
        }
        let shifted: Vec<F> = b.iter().zip(r).map(|(bb, rr)| *bb + eps * *rr).collect();
        let value = max_utility(m, u, &shifted)?;
        let allowance = F::of(1e-9) + F::of(1e-6) * eps * eps;
        max_excess = max_excess.max(value - base_value - allowance);
        probes.push((eps, value, allowance));
    }
    Ok(IrrelevanceReport {
        irrelevant: max_excess <= F::zero(),
        base_value,
        probes,
        shrunk,
        max_excess,
    })
}

/// Convenience wrapper around [`irrelevance_report`].
pub fn is_irrelevant<F: Real>(
    m: &FiniteMarket<F>,
    u: &Utility<F>,
    b: &[F],
    r: &[F],
    eps_grid: &[F],
) -> Result<bool> {
    Ok(irrelevance_report(m, u, b, r, eps_grid)?.irrelevant)
}

/// Stencil scale keeping `b + x + eps * phi` solvent along every probe
/// direction: half the worst-state endowment, relative to the claim size,
/// capped at 1e-2.
fn stencil_scale<F: Real>(b: &[F], phi: &[F]) -> F {
    let min_b = b.iter().fold(F::infinity(), |a, v| a.min(*v));
    let size = phi.iter().fold(F::zero(), |a, v| a.max(v.abs())).max(F::one());
    (F::of(0.5) * min_b / size).min(F::of(1e-2))
}

/// Interval from one-sided supergradient quotients of a bivariate value
/// probe `value(eps, x)`: endowment perturbed by `eps` units of the claim
/// and `x` in cash. `hs` is the halving stencil grid used for every
/// derivative. If the estimated gap is smaller than twice the stencil error
/// the result is collapsed to its midpoint and flagged as a singleton
/// within tolerance.
pub fn interval_from_value_probe<F: Real>(
    value: impl Fn(F, F) -> Result<F>,
    hs: &[F],
) -> Result<DavisInterval<F>> {
    if hs.len() < 2 || hs.iter().any(|h| !(*h > F::zero())) || hs.windows(2).any(|w| !(w[1] < w[0]))
    {
        return Err(Error::InvalidArgument(
            "stencil grid must be positive and strictly decreasing".into(),
        ));
    }
    let u00 = value(F::zero(), F::zero())?;
    let d_plus = probe_derivative(&|e| value(e, F::zero()), u00, Some(Side::Plus), hs)?;
    let d_minus = probe_derivative(&|e| value(e, F::zero()), u00, Some(Side::Minus), hs)?;
    let d_x = probe_derivative(&|x| value(F::zero(), x), u00, None, hs)?;
    if !(d_x.value > F::zero()) {
        return Err(Error::Numeric(format!(
            "cash derivative estimate {} is not positive; cannot normalize prices",
            d_x.value
        )));
    }
    let y = d_x.value;
    let mut p_low = d_plus.value / y;
    let mut p_high = d_minus.value / y;
    let gap_raw = p_high - p_low;
    let scale_p = p_low.abs().max(p_high.abs());
    let stencil = (d_plus.error + d_minus.error) / y + d_x.error * scale_p / y;
    let mut singleton = F::zero();
    if gap_raw < F::of(2.0) * stencil {
        if gap_raw < -(F::of(2.0) * stencil) {
            return Err(Error::Numeric(format!(
                "one-sided estimates out of order beyond the stencil error: gap {gap_raw}, \
                 error bound {stencil}"
            )));
        }
        let mid = (p_low + p_high) / F::of(2.0);
        p_low = mid;
        p_high = mid;
        singleton = F::one();
    }
    let mut diag = BTreeMap::new();
    diag.insert("du_plus".into(), d_plus.value);
    diag.insert("du_minus".into(), d_minus.value);
    diag.insert("du_plus_error".into(), d_plus.error);
    diag.insert("du_minus_error".into(), d_minus.error);
    diag.insert("dx".into(), d_x.value);
    diag.insert("dx_error".into(), d_x.error);
    diag.insert("gap_raw".into(), gap_raw);
    diag.insert("stencil_error".into(), stencil);
    diag.insert("h_max".into(), hs[0]);
    diag.insert("singleton_within_tolerance".into(), singleton);
    Ok(DavisInterval {
        p_low,
        p_high,
        method: PriceMethod::Supergradient,
        y_b: y,
        diagnostics: diag,
    })
}

/// Supergradient interval for a finite market: probes the value function by
/// re-solving the primal at perturbed endowments.
pub fn interval_via_supergradient<F: Real>(
    m: &FiniteMarket<F>,
    u: &Utility<F>,
    b: &[F],
    phi: &[F],
) -> Result<DavisInterval<F>> {
    check_direction(m, phi, "claim")?;
    check_direction(m, b, "endowment")?;
    let h0 = stencil_scale(b, phi);
    if !(h0 > F::zero()) {
        return Err(Error::InvalidModel("endowment must be strictly positive".into()));
    }
    let hs = [h0, h0 / F::of(2.0), h0 / F::of(4.0)];
    let value = |eps: F, x: F| -> Result<F> {
        let shifted: Vec<F> = b.iter().zip(phi).map(|(bb, f)| *bb + x + eps * *f).collect();
        max_utility(m, u, &shifted)
    };
    interval_from_value_probe(value, &hs)
}

/// Central-difference price estimate: the ratio of the claim-direction and
/// cash-direction derivatives of the value function. Blind to kinks by
/// construction; useful as an independent cross-check on smooth problems.
pub fn interval_via_finite_difference<F: Real>(
    m: &FiniteMarket<F>,
    u: &Utility<F>,
    b: &[F],
    phi: &[F],
) -> Result<DavisInterval<F>> {
    check_direction(m, phi, "claim")?;
    check_direction(m, b, "endowment")?;
    let h0 = stencil_scale(b, phi);
    if !(h0 > F::zero()) {
        return Err(Error::InvalidModel("endowment must be strictly positive".into()));
    }
    let hs = [h0, h0 / F::of(2.0), h0 / F::of(4.0)];
    let value = |eps: F, x: F| -> Result<F> {
        let shifted: Vec<F> = b.iter().zip(phi).map(|(bb, f)| *bb + x + eps * *f).collect();
        max_utility(m, u, &shifted)
    };
    let d_eps = probe_derivative(&|e| value(e, F::zero()), F::zero(), None, &hs)?;
    let d_x = probe_derivative(&|x| value(F::zero(), x), F::zero(), None, &hs)?;
    if !(d_x.value > F::zero()) {
        return Err(Error::Numeric(format!(
            "cash derivative estimate {} is not positive; cannot normalize prices",
            d_x.value
        )));
    }
    let price = d_eps.value / d_x.value;
    let mut diag = BTreeMap::new();
    diag.insert("d_eps_error".into(), d_eps.error);
    diag.insert("dx_error".into(), d_x.error);
    diag.insert("h_max".into(), hs[0]);
    Ok(DavisInterval::singleton(price, PriceMethod::FiniteDifference, d_x.value, diag))
}

/// Dual-side statistics feeding the interval endpoint formula.
#[derive(Debug, Clone)]
pub struct DerbInputs<F> {
    /// Marginal utility of cash: total dual mass, including any part not
    /// carried by a density.
    pub y_b: F,
    /// Pairing of the regular dual density with the claim.
    pub e_y_phi: F,
    /// Mass defect `y_b - E[Y_T]`: the mass that escapes the density. Zero
    /// on finite markets.
    pub defect: F,
    /// Whether `env(eps) - env(0)` is a deterministic constant for each
    /// `eps`. State-dependent envelope differences cannot be priced against
    /// a nonzero defect, because only the defect's pairing with constants
    /// is available.
    pub constant_difference: bool,
}

/// Interval endpoints from the envelope formula: the regular pairing plus
/// the defect times the one-sided derivatives of the riskless-floor
/// envelope `env(eps)` at zero, all normalized by `y_b`. The envelope is an
/// infimum of affine functions of `eps`, hence concave; a violation at the
/// stencil scale is reported as a numeric failure.
pub fn interval_derb<F: Real>(
    env: impl Fn(F) -> Result<F>,
    inputs: &DerbInputs<F>,
    hs: &[F],
) -> Result<DavisInterval<F>> {
    if !(inputs.y_b > F::zero()) || !inputs.y_b.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dual mass must be positive, got {}",
            inputs.y_b
        )));
    }
    if !inputs.defect.is_finite() || inputs.defect < -F::of(1e-9) {
        return Err(Error::InvalidArgument(format!(
            "mass defect must be nonnegative, got {}",
            inputs.defect
        )));
    }
    if !inputs.constant_difference && inputs.defect != F::zero() {
        return Err(Error::Unsupported(
            "state-dependent envelope differences with a nonzero mass defect: the escaping \
             mass pairs only with constants"
                .into(),
        ));
    }
    if hs.len() < 2 || hs.iter().any(|h| !(*h > F::zero())) || hs.windows(2).any(|w| !(w[1] < w[0]))
    {
        return Err(Error::InvalidArgument(
            "stencil grid must be positive and strictly decreasing".into(),
        ));
    }
    let defect = inputs.defect.max(F::zero());
    let e0 = env(F::zero())?;
    let slope_plus = probe_derivative(&|e| env(e), e0, Some(Side::Plus), hs)?;
    let slope_minus = probe_derivative(&|e| env(e), e0, Some(Side::Minus), hs)?;
    let h = hs[0];
    let concavity = env(h)? + env(-h)? - F::of(2.0) * e0;
    if concavity > F::of(1e-7) * (F::one() + e0.abs()) {
        return Err(Error::Numeric(format!(
            "envelope fails concavity at the stencil scale: residual {concavity}"
        )));
    }
    let mut p_low = (inputs.e_y_phi + defect * slope_plus.value) / inputs.y_b;
    let mut p_high = (inputs.e_y_phi + defect * slope_minus.value) / inputs.y_b;
    let stencil = defect * (slope_plus.error + slope_minus.error) / inputs.y_b;
    let gap_raw = p_high - p_low;
    let mut singleton = F::zero();
    if gap_raw < F::of(2.0) * stencil + F::of(1e-15) {
        if gap_raw < -(F::of(2.0) * stencil + F::of(1e-12)) {
            return Err(Error::Numeric(format!(
                "envelope slopes out of order beyond the stencil error: gap {gap_raw}"
            )));
        }
        let mid = (p_low + p_high) / F::of(2.0);
        p_low = mid;
        p_high = mid;
        singleton = F::one();
    }
    let mut diag = BTreeMap::new();
    diag.insert("env_at_zero".into(), e0);
    diag.insert("env_slope_plus".into(), slope_plus.value);
    diag.insert("env_slope_minus".into(), slope_minus.value);
    diag.insert("env_slope_plus_error".into(), slope_plus.error);
    diag.insert("env_slope_minus_error".into(), slope_minus.error);
    diag.insert("defect".into(), defect);
    diag.insert("concavity_residual".into(), concavity);
    diag.insert("singleton_within_tolerance".into(), singleton);
    Ok(DavisInterval {
        p_low,
        p_high,
        method: PriceMethod::DerbFormula,
        y_b: inputs.y_b,
        diagnostics: diag,
    })
}
