//! Path engine for the stopped stochastic-exponential deflator.
//!
//! Everything runs in the clock `s = -ln(1 - t)`, which maps the horizon
//! `[0, 1)` to `[0, infinity)`. The two time-changed integrals
//! `int (1-u)^{-1/2} dB` become standard Brownian motions in that clock, so
//! their exponentials are geometric Brownian motions with per-step log
//! increments `N(-ds/2, ds)` and no discretization error in the marginals.
//! The singular drift magnitude `1/sqrt(1-t)` is never sampled pointwise:
//! every step uses the closed forms
//!
//! * `int (1-u)^{-1/2} du = 2 (sqrt(1-t_i) - sqrt(1-t_{i+1}))`,
//! * `dt` for the raw-driver variance, and
//! * the exact covariance of a raw driver with its time-changed integral,
//!
//! so raw terminal values (needed for claims on the driver itself) are
//! simulated jointly with the exponentials without bias.
//!
//! A path stops when its own exponential falls to 1/2 or the companion
//! exponential rises to 2, whichever the grid sees first; the crossing
//! point is located by linear interpolation of the exponential between the
//! straddling grid values. First-passage excursions inside a step are
//! invisible by construction; the induced bias is measured by the
//! grid-refinement test below rather than corrected.
//!
//! The clock grid covers blocks of length [`S_BLOCK`]; paths that have not
//! stopped by the end of a block continue into the next one (the drivers'
//! remaining calendar-time variance shrinks like `e^{-s}`, so late blocks
//! barely move the raw values). After [`MAX_BLOCKS`] blocks a path is
//! frozen where it stands and flagged.

use crate::brownian::mc::{run_pairs, GaussSource};
use crate::brownian::{check_n_paths, DeflatorStats, LambdaSpec, PathModel};
use crate::error::{Error, Result};

/// Clock length of one simulation block; `1 - t` shrinks by `e^{-60}` per
/// block, and the first block already reaches `t = 1 - e^{-60}`.
pub(crate) const S_BLOCK: f64 = 60.0;
pub(crate) const MAX_BLOCKS: usize = 20;

/// Barrier levels on the exponential scale.
const LOWER_BARRIER: f64 = 0.5;
const UPPER_BARRIER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StopCause {
    /// The path's own exponential fell to 1/2.
    LowerBarrier,
    /// The companion exponential rose to 2.
    UpperBarrier,
    /// Neither barrier resolved within the block budget.
    Capped,
}

/// Closed-form coefficients of one clock step `[s_lo, s_hi]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepCoefs {
    /// Calendar-time length `dt = e^{-s_lo} - e^{-s_hi}`.
    pub dt: f64,
    /// Singular-drift integral `int (1-u)^{-1/2} du` over the step.
    pub isq: f64,
    /// Raw-driver increment = `c1 * xi1 + c2 * xi2` where `xi1` also drives
    /// the time-changed integral; this reproduces the exact covariance.
    pub c1: f64,
    pub c2: f64,
    /// Remaining calendar-time variance beyond the step, `e^{-s_hi}`.
    pub rem: f64,
}

pub(crate) fn step_coefs(s_lo: f64, s_hi: f64) -> StepCoefs {
    let e_lo = (-s_lo).exp();
    let e_hi = (-s_hi).exp();
    let dt = e_lo - e_hi;
    let isq = 2.0 * ((-0.5 * s_lo).exp() - (-0.5 * s_hi).exp());
    let ds = s_hi - s_lo;
    let c1 = isq / ds.sqrt();
    let c2 = (dt - c1 * c1).max(0.0).sqrt();
    StepCoefs { dt, isq, c1, c2, rem: e_hi }
}

/// Uniform-in-clock grid for one block, with per-step closed forms cached
/// for block 0. Later blocks reuse the cache scaled by `e^{-k S_BLOCK}`
/// (calendar quantities) and `e^{-k S_BLOCK / 2}` (square-root quantities).
pub(crate) struct ClockGrid {
    pub ds: f64,
    pub n_steps: usize,
    steps0: Vec<StepCoefs>,
}

impl ClockGrid {
    pub fn new(n_steps: usize) -> Self {
        let ds = S_BLOCK / n_steps as f64;
        let steps0 = (0..n_steps).map(|j| step_coefs(j as f64 * ds, (j + 1) as f64 * ds)).collect();
        ClockGrid { ds, n_steps, steps0 }
    }

    fn step(&self, block: usize, j: usize) -> StepCoefs {
        let mu = (-(block as f64) * S_BLOCK).exp();
        let nu = mu.sqrt();
        let c = self.steps0[j];
        StepCoefs { dt: mu * c.dt, isq: nu * c.isq, c1: nu * c.c1, c2: nu * c.c2, rem: mu * c.rem }
    }

    /// Grid total of the per-step singular-drift integrals; converges to
    /// `int_0^1 (1-u)^{-1/2} du = 2` as the covered clock span grows.
    pub fn drift_l1(&self) -> f64 {
        let mut total = 0.0;
        for block in 0..MAX_BLOCKS {
            let nu = (-(block as f64) * S_BLOCK / 2.0).exp();
            for c in &self.steps0 {
                total += nu * c.isq;
            }
        }
        total
    }
}

/// Pointwise magnitude of the singular drift.
pub fn ds_drift_magnitude(t: f64) -> f64 {
    1.0 / (1.0 - t).sqrt()
}

/// Clock times of the calendar checkpoints `t = 0.25, 0.5, 0.75`.
fn checkpoint_clocks() -> [f64; 3] {
    [-(0.75f64.ln()), -(0.5f64.ln()), -(0.25f64.ln())]
}

/// Grid indices (1-based step ends) of the first grid point at or past
/// each checkpoint clock. Checkpoints are sampled at grid points rather
/// than interpolated: the sampled stopped exponential is a martingale
/// along the grid, so grid sampling keeps every checkpoint mean exactly
/// one while any within-step rule would leak bias at coarse steps.
fn checkpoint_indices(ds: f64) -> [usize; 3] {
    checkpoint_clocks().map(|s| (s / ds).ceil() as usize)
}

/// Fraction `theta` of a step at which the linearly interpolated
/// exponential crosses `barrier`, or `None` when the grid values do not
/// straddle it. `falling` selects the crossing direction.
pub(crate) fn crossing_fraction(prev: f64, next: f64, barrier: f64, falling: bool) -> Option<f64> {
    let straddle =
        if falling { prev > barrier && next <= barrier } else { prev < barrier && next >= barrier };
    if !straddle {
        return None;
    }
    Some(((barrier - prev) / (next - prev)).clamp(0.0, 1.0))
}

/// Resolves which barrier a step hit first. Takes the exponential values at
/// the step ends and returns `(theta, cause, own value at the stop)`. When
/// both barriers are crossed in one step the smaller interpolated fraction
/// wins; a tie goes to the lower barrier, whose stop value is exact.
pub(crate) fn resolve_stop(
    own_prev: f64,
    own_next: f64,
    comp_prev: f64,
    comp_next: f64,
) -> Option<(f64, StopCause, f64)> {
    let th_own = crossing_fraction(own_prev, own_next, LOWER_BARRIER, true);
    let th_comp = crossing_fraction(comp_prev, comp_next, UPPER_BARRIER, false);
    match (th_own, th_comp) {
        (Some(a), Some(b)) if a <= b => Some((a, StopCause::LowerBarrier, LOWER_BARRIER)),
        (Some(a), None) => Some((a, StopCause::LowerBarrier, LOWER_BARRIER)),
        (_, Some(b)) => Some((b, StopCause::UpperBarrier, own_prev + b * (own_next - own_prev))),
        (None, None) => None,
    }
}

/// Measure adjustments applied to a path (identity under the base measure).
#[derive(Debug, Clone, Copy)]
pub(crate) struct DsDynamics {
    /// Compensates the singular drift while it is active: the time-changed
    /// integrals gain `+ds` per step and the companion raw driver `+isq`.
    /// Used when simulating under a measure that absorbs that drift.
    pub q_compensation: bool,
    /// Constant extra drift subtracted from the companion raw driver (and
    /// `drift * isq` from its time-changed integral), active on every step
    /// including after the stop.
    pub comp_drift: f64,
}

impl DsDynamics {
    pub fn base() -> Self {
        DsDynamics { q_compensation: false, comp_drift: 0.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DsOptions {
    pub track_raw_own: bool,
    pub track_raw_comp: bool,
    pub checkpoints: bool,
    /// Resolve the eventual fate of both barriers past the stop: the lower
    /// barrier is hit with probability one on the infinite clock, and the
    /// companion's upper-barrier hit is decided by its exact conditional
    /// probability `min(1, V_stop / 2)` instead of more stepping.
    pub resolve_barriers: bool,
    pub dynamics: DsDynamics,
}

impl DsOptions {
    pub fn bare() -> Self {
        DsOptions {
            track_raw_own: false,
            track_raw_comp: false,
            checkpoints: false,
            resolve_barriers: false,
            dynamics: DsDynamics::base(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DsOutputs {
    /// Own exponential at the stop (the deflator factor).
    pub y_factor: f64,
    pub stop_t: f64,
    pub cause: StopCause,
    /// Raw drivers at the calendar horizon (zero when untracked).
    pub raw_own: f64,
    pub raw_comp: f64,
    /// Own exponential at the first grid times at or past
    /// `t = 0.25, 0.5, 0.75`, frozen at its stop-step value past the
    /// stop; NaN when checkpoints are off.
    pub checkpoints: [f64; 3],
    /// Barrier fates, filled when `resolve_barriers` is on.
    pub lower_hits: bool,
    pub upper_hits: bool,
}

/// Simulates one stopped-exponential path on the clock grid.
pub(crate) fn ds_path(g: &mut GaussSource, grid: &ClockGrid, opt: &DsOptions) -> Result<DsOutputs> {
    let ds = grid.ds;
    let sqds = ds.sqrt();
    let ln_lower = LOWER_BARRIER.ln();
    let ln_upper = UPPER_BARRIER.ln();
    let cp_steps = checkpoint_indices(ds);

    let mut a_own = 0.0f64;
    let mut a_comp = 0.0f64;
    let mut raw_own = 0.0f64;
    let mut raw_comp = 0.0f64;
    let mut cp = [f64::NAN; 3];
    let mut cp_idx = if opt.checkpoints { 0 } else { 3 };
    let mut stop: Option<(f64, StopCause, f64)> = None;

    'blocks: for block in 0..MAX_BLOCKS {
        for j in 0..grid.n_steps {
            let s_i = block as f64 * S_BLOCK + j as f64 * ds;
            let c = grid.step(block, j);

            let xi1 = g.normal();
            let mut d_own_int = sqds * xi1;
            if opt.track_raw_own {
                let xi2 = g.normal();
                raw_own += c.c1 * xi1 + c.c2 * xi2;
            }
            let et1 = g.normal();
            let mut d_comp_int = sqds * et1;
            if opt.track_raw_comp {
                let et2 = g.normal();
                let mut d_raw = c.c1 * et1 + c.c2 * et2;
                if opt.dynamics.q_compensation {
                    d_raw += c.isq;
                }
                d_raw -= opt.dynamics.comp_drift * c.dt;
                raw_comp += d_raw;
            }
            if opt.dynamics.q_compensation {
                d_own_int += ds;
                d_comp_int += ds;
            }
            d_comp_int -= opt.dynamics.comp_drift * c.isq;

            let prev_own = a_own;
            let prev_comp = a_comp;
            a_own += d_own_int - 0.5 * ds;
            a_comp += d_comp_int - 0.5 * ds;
            if !(a_own.is_finite() && a_comp.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite exponent at block {block}, step {j} (clock step {ds}); \
                     refine the time grid"
                )));
            }

            let crossed = if prev_own > ln_lower && a_own <= ln_lower
                || prev_comp < ln_upper && a_comp >= ln_upper
            {
                resolve_stop(prev_own.exp(), a_own.exp(), prev_comp.exp(), a_comp.exp())
            } else {
                None
            };
            let s_star = crossed.map(|(th, _, _)| s_i + th * ds);

            // Grid sampling (never within-step interpolation): the path
            // that crosses in this step contributes its overshot endpoint,
            // which keeps the sampled checkpoint an exact grid martingale.
            let step_end = block * grid.n_steps + j + 1;
            while cp_idx < 3 && cp_steps[cp_idx] <= step_end {
                cp[cp_idx] = a_own.exp();
                cp_idx += 1;
            }

            if let (Some((_, cause, y)), Some(ss)) = (crossed, s_star) {
                if opt.track_raw_own {
                    raw_own += c.rem.sqrt() * g.normal();
                }
                if opt.track_raw_comp {
                    raw_comp += c.rem.sqrt() * g.normal() - opt.dynamics.comp_drift * c.rem;
                }
                stop = Some((ss, cause, y));
                break 'blocks;
            }
        }
    }

    let (stop_s, cause, y_factor) =
        stop.unwrap_or_else(|| (MAX_BLOCKS as f64 * S_BLOCK, StopCause::Capped, a_own.exp()));
    for k in cp_idx..3 {
        // Checkpoints past the stop step freeze at the stop-step grid
        // value, not at the barrier-exact terminal value: the frozen
        // grid process is the one whose mean stays pinned at one.
        cp[k] = a_own.exp();
    }
    let (mut lower_hits, mut upper_hits) = (false, false);
    if opt.resolve_barriers {
        match cause {
            StopCause::LowerBarrier => {
                lower_hits = true;
                // Companion exponential from level V drifts to zero on the
                // infinite clock; it ever reaches 2 with probability V/2.
                let p = (a_comp - ln_upper).exp().min(1.0);
                upper_hits = g.uniform() < p;
            }
            StopCause::UpperBarrier => {
                upper_hits = true;
                // The own exponential drifts to zero, so the lower barrier
                // is hit with probability one.
                lower_hits = true;
            }
            StopCause::Capped => {}
        }
    }
    Ok(DsOutputs {
        y_factor,
        stop_t: 1.0 - (-stop_s).exp(),
        cause,
        raw_own,
        raw_comp,
        checkpoints: cp,
        lower_hits,
        upper_hits,
    })
}

/// One-path terminal exponential for a constant market price of risk on a
/// uniform calendar grid: the log increments are exact, so the scheme is
/// unbiased for any step count. Returns `(terminal value, checkpoints)`
/// with checkpoints read at the grid times nearest to `t = T/4, T/2, 3T/4`.
fn constant_lambda_path(
    g: &mut GaussSource,
    lambda: f64,
    horizon: f64,
    n_steps: usize,
) -> Result<(f64, [f64; 3])> {
    let dt = horizon / n_steps as f64;
    let sqdt = dt.sqrt();
    let mut a = 0.0f64;
    let mut cp = [f64::NAN; 3];
    for i in 0..n_steps {
        a += -lambda * sqdt * g.normal() - 0.5 * lambda * lambda * dt;
        if !a.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite exponent at step {i} (calendar step {dt}); refine the time grid"
            )));
        }
        for (k, cpk) in cp.iter_mut().enumerate() {
            if i + 1 == (n_steps * (k + 1)).div_ceil(4) {
                *cpk = a.exp();
            }
        }
    }
    Ok((a.exp(), cp))
}

/// Estimates the terminal mean of the deflator's stochastic exponential.
///
/// The exponent is simulated and exponentiated, so every path value is
/// strictly positive by construction. Requires at least 10^4 paths.
pub fn simulate_stochastic_exponential(model: &PathModel, n_paths: usize) -> Result<DeflatorStats> {
    model.validate()?;
    check_n_paths(n_paths)?;
    let n_pairs = n_paths.div_ceil(2);
    let acc = match model.lambda {
        LambdaSpec::Constant(l) => run_pairs(n_pairs, model.seed, &|g: &mut GaussSource| {
            let (y, _) = constant_lambda_path(g, l, model.horizon, model.n_steps)?;
            Ok([y])
        })?,
        LambdaSpec::DsStopped => {
            let grid = ClockGrid::new(model.n_steps);
            let opt = DsOptions::bare();
            run_pairs(n_pairs, model.seed, &|g: &mut GaussSource| {
                let out = ds_path(g, &grid, &opt)?;
                Ok([out.y_factor])
            })?
        }
    };
    DeflatorStats::new(1.0, acc[0].mean(), acc[0].ci95(), 2 * n_pairs)
}

/// Deflator mean with confidence bounds at a calendar checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointStat {
    pub t: f64,
    pub mean: f64,
    pub ci_halfwidth: f64,
}

/// Samples the deflator mean at the grid times at or just past
/// `t = T/4, T/2, 3T/4` plus the horizon. The mean of a nonnegative
/// supermartingale is nonincreasing, so the profile should fall (or stay
/// flat, for a true martingale) within noise. Checkpoints are read at
/// grid points so their sampled means are exactly flat for a martingale;
/// each entry reports the actual calendar time it was read at.
pub fn supermartingale_profile(model: &PathModel, n_paths: usize) -> Result<Vec<CheckpointStat>> {
    model.validate()?;
    check_n_paths(n_paths)?;
    let n_pairs = n_paths.div_ceil(2);
    let (acc, ts) = match model.lambda {
        LambdaSpec::Constant(l) => {
            let acc = run_pairs(n_pairs, model.seed, &|g: &mut GaussSource| {
                let (y, cp) = constant_lambda_path(g, l, model.horizon, model.n_steps)?;
                Ok([cp[0], cp[1], cp[2], y])
            })?;
            let dt = model.horizon / model.n_steps as f64;
            let mut ts = [0.0; 4];
            for (k, t) in ts.iter_mut().enumerate().take(3) {
                *t = (model.n_steps * (k + 1)).div_ceil(4) as f64 * dt;
            }
            ts[3] = model.horizon;
            (acc, ts)
        }
        LambdaSpec::DsStopped => {
            let grid = ClockGrid::new(model.n_steps);
            let opt = DsOptions { checkpoints: true, ..DsOptions::bare() };
            let acc = run_pairs(n_pairs, model.seed, &|g: &mut GaussSource| {
                let out = ds_path(g, &grid, &opt)?;
                let cp = out.checkpoints;
                Ok([cp[0], cp[1], cp[2], out.y_factor])
            })?;
            let idx = checkpoint_indices(grid.ds);
            let mut ts = [0.0; 4];
            for k in 0..3 {
                ts[k] = 1.0 - (-(idx[k] as f64) * grid.ds).exp();
            }
            ts[3] = 1.0;
            (acc, ts)
        }
    };
    Ok(ts
        .iter()
        .zip(acc.iter())
        .map(|(&t, a)| CheckpointStat { t, mean: a.mean(), ci_halfwidth: a.ci95() })
        .collect())
}

/// Stopping statistics of the singular-drift construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DsStoppedSummary {
    pub n_paths: usize,
    /// Frequency (with 95% halfwidth) of the own exponential ever reaching
    /// 1/2; the infinite-clock law makes this one.
    pub p_lower_before_horizon: (f64, f64),
    /// Frequency of the companion exponential ever reaching 2; the exact
    /// law gives one half.
    pub p_upper_before_horizon: (f64, f64),
    /// Fraction of paths stopped by their own barrier rather than the
    /// companion's.
    pub lower_first_fraction: f64,
    /// Mean calendar stopping time.
    pub mean_stop_time: f64,
    /// Fraction of paths frozen at the block cap with neither barrier
    /// resolved on the grid.
    pub capped_fraction: f64,
    /// Grid total of the per-step closed-form drift integrals; the exact
    /// value of `int_0^1 (1-u)^{-1/2} du` is 2.
    pub drift_l1_grid: f64,
}

/// Runs the stopped construction and reports when and how paths stop. The
/// drift is active on `[0, stop]` with magnitude [`ds_drift_magnitude`] and
/// switches off at the stop.
pub fn ds_stopped_drift(model: &PathModel, n_paths: usize) -> Result<DsStoppedSummary> {
    model.validate()?;
    check_n_paths(n_paths)?;
    if !matches!(model.lambda, LambdaSpec::DsStopped) {
        return Err(Error::InvalidArgument(
            "stopping statistics are defined for the stopped singular drift only".into(),
        ));
    }
    let grid = ClockGrid::new(model.n_steps);
    let opt = DsOptions { resolve_barriers: true, ..DsOptions::bare() };
    let n_pairs = n_paths.div_ceil(2);
    let acc = run_pairs(n_pairs, model.seed, &|g: &mut GaussSource| {
        let out = ds_path(g, &grid, &opt)?;
        Ok([
            if out.lower_hits { 1.0 } else { 0.0 },
            if out.upper_hits { 1.0 } else { 0.0 },
            if out.cause == StopCause::LowerBarrier { 1.0 } else { 0.0 },
            out.stop_t,
            if out.cause == StopCause::Capped { 1.0 } else { 0.0 },
        ])
    })?;
    Ok(DsStoppedSummary {
        n_paths: 2 * n_pairs,
        p_lower_before_horizon: (acc[0].mean(), acc[0].ci95()),
        p_upper_before_horizon: (acc[1].mean(), acc[1].ci95()),
        lower_first_fraction: acc[2].mean(),
        mean_stop_time: acc[3].mean(),
        capped_fraction: acc[4].mean(),
        drift_l1_grid: grid.drift_l1(),
    })
}
