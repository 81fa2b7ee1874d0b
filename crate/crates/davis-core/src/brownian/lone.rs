//! Late-time measure-change probe: how much of a claim's supremum the
//! conditional expectation can reach.
//!
//! Fix a time `t0` close to the horizon and one realized prefix of the
//! stopped-drift model. For each target `a`, change measure so that the
//! nontraded driver gains the constant drift
//!
//! `delta(a) = (W_{t0} 1{|W_{t0}| <= 1/(1-t0)} - a) / (1 - t0)`
//!
//! on `[t0, 1]`, on top of compensating whatever remains of the stopped
//! singular drift. When the singular drift has already stopped and the
//! truncation indicator is one, the terminal driver under the probe
//! measure is exactly `a + N(0, 1-t0)`: the conditional law concentrates
//! wherever the target says, so sweeping `a` drives the conditional
//! expectation of `phi(W_1)` toward `sup phi` as `t0` rises. The probe
//! measures that sweep by Monte Carlo on the suffix.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::brownian::envelope::ClaimFunction;
use crate::brownian::mc::{run_pairs, GaussSource};
use crate::brownian::paths::{resolve_stop, step_coefs, MAX_BLOCKS, S_BLOCK};
use crate::brownian::{check_n_paths, LambdaSpec, PathModel};
use crate::error::{Error, Result};

/// Number of uniform clock steps for the shared prefix.
const PREFIX_STEPS: usize = 400;

/// State of the realized prefix at `t0`.
#[derive(Debug, Clone, Copy)]
struct PrefixState {
    /// Whether the singular drift is still active at `t0`.
    active: bool,
    /// Log of the own and companion exponentials (frozen if stopped).
    a_own: f64,
    a_comp: f64,
    /// Nontraded driver value at `t0`.
    w: f64,
}

/// One realized prefix under the base measure, on a uniform clock grid
/// over `[0, s0]`. The nontraded driver is the companion raw process; once
/// the exponentials stop, its remaining variance to `t0` is flushed in one
/// draw.
fn base_prefix(g: &mut GaussSource, s0: f64, n_steps: usize) -> Result<PrefixState> {
    let ds = s0 / n_steps as f64;
    let sqds = ds.sqrt();
    let ln_lower = 0.5f64.ln();
    let ln_upper = 2.0f64.ln();
    let mut a_own = 0.0f64;
    let mut a_comp = 0.0f64;
    let mut w = 0.0f64;
    for j in 0..n_steps {
        let s_lo = j as f64 * ds;
        let c = step_coefs(s_lo, s_lo + ds);
        let xi = g.normal();
        let e1 = g.normal();
        let e2 = g.normal();
        w += c.c1 * e1 + c.c2 * e2;
        let prev_own = a_own;
        let prev_comp = a_comp;
        a_own += sqds * xi - 0.5 * ds;
        a_comp += sqds * e1 - 0.5 * ds;
        if !(a_own.is_finite() && a_comp.is_finite() && w.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite prefix state at step {j} (clock step {ds})"
            )));
        }
        if prev_own > ln_lower && a_own <= ln_lower || prev_comp < ln_upper && a_comp >= ln_upper {
            if let Some((th, _, y)) =
                resolve_stop(prev_own.exp(), a_own.exp(), prev_comp.exp(), a_comp.exp())
            {
                let v_prev = prev_comp.exp();
                let v_stop = v_prev + th * (a_comp.exp() - v_prev);
                // Remaining driver variance from the step end to t0.
                let rem = c.rem - (-s0).exp();
                w += rem.max(0.0).sqrt() * g.normal();
                return Ok(PrefixState { active: false, a_own: y.ln(), a_comp: v_stop.ln(), w });
            }
        }
    }
    Ok(PrefixState { active: true, a_own, a_comp, w })
}

/// Terminal driver value of one suffix path under the probe measure with
/// constant extra drift `d_a`. A stopped prefix collapses to a single
/// exact draw; an active one keeps stepping the exponentials with the
/// compensated dynamics until they stop, then flushes.
fn probe_suffix(
    g: &mut GaussSource,
    state: &PrefixState,
    s0: f64,
    d_a: f64,
    n_steps_per_block: usize,
) -> Result<f64> {
    let rem0 = (-s0).exp();
    if !state.active {
        return Ok(state.w + rem0.sqrt() * g.normal() - d_a * rem0);
    }
    let ds = S_BLOCK / n_steps_per_block as f64;
    let sqds = ds.sqrt();
    let ln_lower = 0.5f64.ln();
    let ln_upper = 2.0f64.ln();
    let mut a_own = state.a_own;
    let mut a_comp = state.a_comp;
    let mut w = state.w;
    let mut s_lo = s0;
    let total_steps = n_steps_per_block * MAX_BLOCKS;
    for j in 0..total_steps {
        let c = step_coefs(s_lo, s_lo + ds);
        let xi = g.normal();
        let e1 = g.normal();
        let e2 = g.normal();
        // Compensated singular drift plus the probe drift.
        w += c.c1 * e1 + c.c2 * e2 + c.isq - d_a * c.dt;
        let prev_own = a_own;
        let prev_comp = a_comp;
        a_own += sqds * xi + ds - 0.5 * ds;
        a_comp += sqds * e1 + ds - d_a * c.isq - 0.5 * ds;
        if !(a_own.is_finite() && a_comp.is_finite() && w.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite suffix state at step {j} (clock step {ds})"
            )));
        }
        if (prev_own > ln_lower && a_own <= ln_lower || prev_comp < ln_upper && a_comp >= ln_upper)
            && resolve_stop(prev_own.exp(), a_own.exp(), prev_comp.exp(), a_comp.exp()).is_some() {
                return Ok(w + c.rem.sqrt() * g.normal() - d_a * c.rem);
            }
        s_lo += ds;
    }
    Ok(w)
}

/// Conditional-claim estimate for one probe target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeValue {
    pub a: f64,
    pub value: f64,
    pub ci_halfwidth: f64,
}

/// Probe report over a target grid at one conditioning time.
#[derive(Debug, Clone)]
pub struct LoneProbeReport {
    pub t0: f64,
    /// Supremum of the claim over its search window.
    pub sup_phi: f64,
    /// Realized driver value at `t0` for the shared prefix.
    pub w_t0: f64,
    /// Whether the singular drift had already stopped by `t0`.
    pub prefix_stopped: bool,
    pub values: Vec<ProbeValue>,
    pub best: ProbeValue,
    pub n_paths: usize,
}

/// Sweeps the probe targets `a_grid` at conditioning time `t0` and
/// estimates `E[phi(W_1)]` under each probe measure, sharing one realized
/// prefix. As `t0` rises toward one, the best value over a grid covering
/// the claim's maximizer approaches `sup phi`.
pub fn lone_probe(
    model: &PathModel,
    phi: &ClaimFunction,
    t0: f64,
    a_grid: &[f64],
    n_paths: usize,
) -> Result<LoneProbeReport> {
    model.validate()?;
    check_n_paths(n_paths)?;
    if !matches!(model.lambda, LambdaSpec::DsStopped) {
        return Err(Error::InvalidArgument(
            "the probe construction needs the stopped singular drift".into(),
        ));
    }
    if !(t0 > 0.0 && t0 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "conditioning time must lie strictly inside (0, 1), got {t0}"
        )));
    }
    if a_grid.is_empty() || a_grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("target grid must be nonempty and finite".into()));
    }

    let s0 = -(1.0 - t0).ln();
    let mut prefix_rng = ChaCha12Rng::seed_from_u64(model.seed);
    prefix_rng.set_stream(u64::MAX);
    let state = base_prefix(&mut GaussSource::fresh(&mut prefix_rng), s0, PREFIX_STEPS)?;

    let truncated_w = if state.w.abs() <= 1.0 / (1.0 - t0) { state.w } else { 0.0 };
    let n_pairs = n_paths.div_ceil(2);
    let mut values = Vec::with_capacity(a_grid.len());
    for (idx, &a) in a_grid.iter().enumerate() {
        let d_a = (truncated_w - a) / (1.0 - t0);
        // Decorrelated sub-seed per target; the prefix stays shared.
        let seed = model.seed ^ (idx as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let acc = run_pairs(n_pairs, seed, &|g: &mut GaussSource| {
            let w_t = probe_suffix(g, &state, s0, d_a, model.n_steps)?;
            Ok([phi.eval(w_t)])
        })?;
        values.push(ProbeValue { a, value: acc[0].mean(), ci_halfwidth: acc[0].ci95() });
    }
    let best =
        *values.iter().max_by(|x, y| x.value.total_cmp(&y.value)).expect("target grid is nonempty");
    let (_, sup_phi) = phi.supremum()?;
    Ok(LoneProbeReport {
        t0,
        sup_phi,
        w_t0: state.w,
        prefix_stopped: !state.active,
        values,
        best,
        n_paths: 2 * n_pairs,
    })
}
