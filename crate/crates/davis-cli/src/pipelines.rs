//! One function per command: load the inputs, call the library, and shape
//! a JSON result plus an optional plot-ready table.

use std::fs;

use davis_core::brownian::{
    corrector_check, example1_interval, simulate_stochastic_exponential, supermartingale_profile,
    ClaimFunction, CorrectorConfig, DeflatorStats, EnvelopeFunctions, LambdaSpec, PathModel,
};
use davis_core::davis::sweep::csw_sweep;
use davis_core::davis::{
    davis_interval_finite, directional_derivative_lp, interval_via_finite_difference,
    interval_via_supergradient, DavisInterval, PriceMethod,
};
use davis_core::market::{
    check_no_arbitrage, family_by_name, truncate, FiniteMarket, MarketFile, TruncationMode,
};
use davis_core::optim::{solve_dual, solve_primal, SolverOpts};
use davis_core::superrep::{superreplicate, Superreplicability};
use davis_core::utility::Utility;
use davis_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::{CommandName, ExperimentConfig, UtilityName};
use crate::emit::{self, num, Table};

/// Runs the resolved configuration and emits its artifacts.
pub fn execute(cfg: &ExperimentConfig) -> Result<()> {
    let cmd = cfg.command.expect("a resolved configuration names its command");
    let (result, table) = match cmd {
        CommandName::Solve => solve_cmd(cfg)?,
        CommandName::Dual => dual_cmd(cfg)?,
        CommandName::Superrep => superrep_cmd(cfg)?,
        CommandName::Davis => davis_cmd(cfg)?,
        CommandName::Sweep => sweep_cmd(cfg)?,
        CommandName::Mc => mc_cmd(cfg)?,
        CommandName::Corrector => corrector_cmd(cfg)?,
    };
    emit::deliver(cfg, result, table)
}

/// Finite market named by the configuration (file, or truncated family),
/// checked for arbitrage up front so every pipeline fails the same way.
fn load_market(cfg: &ExperimentConfig) -> Result<FiniteMarket<f64>> {
    let market = if let Some(path) = &cfg.market {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read market {}: {e}", path.display()))
        })?;
        MarketFile::from_json(&text)?.into_market()?
    } else {
        let name = cfg.family.as_deref().expect("resolve guarantees a model source");
        let family = family_by_name::<f64>(name)?;
        let level = cfg.levels.as_ref().expect("a family truncation has a level")[0];
        truncate(&family, level, TruncationMode::Renormalize)?
    };
    check_no_arbitrage(&market)?;
    Ok(market)
}

/// The claim a pricing command works on: the market's claim array, or the
/// constant one claim for a truncated family (which carries none).
fn claim_for(m: &FiniteMarket<f64>, from_family: bool) -> Result<Vec<f64>> {
    match &m.claim {
        Some(c) => Ok(c.clone()),
        None if from_family => Ok(vec![1.0; m.n_states()]),
        None => Err(Error::InvalidArgument(
            "the market file declares no claim; add a \"claim\" array".into(),
        )),
    }
}

fn utility_of(cfg: &ExperimentConfig) -> Result<Utility<f64>> {
    match cfg.utility.expect("resolve guarantees a utility") {
        UtilityName::Log => Ok(Utility::log()),
        UtilityName::Power => Utility::power(cfg.gamma.expect("resolve pairs gamma with power")),
    }
}

fn opts_of(cfg: &ExperimentConfig) -> SolverOpts<f64> {
    SolverOpts { xtol: cfg.tol.expect("resolve sets the tolerance"), max_iter: 400 }
}

/// JSON-safe number: unbounded range endpoints become null.
fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn method_name(m: PriceMethod) -> &'static str {
    match m {
        PriceMethod::DualSweep => "dual_sweep",
        PriceMethod::Supergradient => "supergradient",
        PriceMethod::DerbFormula => "derb_formula",
        PriceMethod::FiniteDifference => "finite_difference",
    }
}

fn verdict_name(v: Superreplicability) -> &'static str {
    match v {
        Superreplicability::Replicable => "replicable",
        Superreplicability::UniquelySuper => "uniquely_super",
        Superreplicability::NotUnique => "not_unique",
    }
}

fn interval_json(iv: &DavisInterval<f64>) -> Value {
    json!({
        "method": method_name(iv.method),
        "p_low": iv.p_low,
        "p_high": iv.p_high,
        "width": iv.width(),
        "midpoint": iv.midpoint(),
        "y_b": iv.y_b,
        "diagnostics": iv.diagnostics,
    })
}

fn stats_json(s: &DeflatorStats) -> Value {
    json!({ "y0": s.y0, "e_yt": s.e_yt, "ci_halfwidth": s.ci_halfwidth, "n_paths": s.n_paths })
}

/// Per-state table with the market columns plus named extras.
fn state_table(m: &FiniteMarket<f64>, extras: &[(&'static str, &[f64])]) -> Table {
    let mut columns = vec!["state", "prob", "dS", "endowment"];
    columns.extend(extras.iter().map(|(name, _)| *name));
    let rows = (0..m.n_states())
        .map(|i| {
            let mut row = vec![i.to_string(), num(m.probs[i]), num(m.ds[i]), num(m.endowment[i])];
            row.extend(extras.iter().map(|(_, v)| num(v[i])));
            row
        })
        .collect();
    Table { columns, rows }
}

/// Bounded monotone claim used by the canned Monte-Carlo experiments.
pub(crate) fn tanh_claim() -> Result<ClaimFunction> {
    ClaimFunction::new(|a: f64| a.tanh(), -60.0, 60.0)
}

/// Endowment profile with a smooth bump over a kinked claim: the lower
/// envelope of `B + eps * phi` is `2 - |eps|` near zero, so its one-sided
/// slopes there are -1 and +1.
pub(crate) fn kinked_envelope() -> Result<EnvelopeFunctions> {
    let b = ClaimFunction::new(|a: f64| 2.0 + (-a * a).exp(), -60.0, 60.0)?;
    EnvelopeFunctions::new(b, tanh_claim()?)
}

fn solve_cmd(cfg: &ExperimentConfig) -> Result<(Value, Option<Table>)> {
    let m = load_market(cfg)?;
    let u = utility_of(cfg)?;
    let sol = solve_primal(&m, &u, &opts_of(cfg))?;
    let table = state_table(&m, &[("wealth", &sol.wealth)]);
    let result = json!({
        "value": sol.value,
        "position": sol.pi,
        "feasible_interval": [finite_or_null(sol.feasible.0), finite_or_null(sol.feasible.1)],
        "stationarity_residual": sol.stationarity,
        "wealth": sol.wealth,
    });
    Ok((result, Some(table)))
}

fn dual_cmd(cfg: &ExperimentConfig) -> Result<(Value, Option<Table>)> {
    let m = load_market(cfg)?;
    let u = utility_of(cfg)?;
    let opts = opts_of(cfg);
    let primal = solve_primal(&m, &u, &opts)?;
    let dual = solve_dual(&m, &u, &opts, 0.0)?;
    // Largest componentwise residual of U'(wealth) = density.
    let link = primal
        .wealth
        .iter()
        .zip(&dual.density)
        .map(|(&w, &y)| (u.marginal(w) - y).abs())
        .fold(0.0f64, f64::max);
    let table = state_table(&m, &[("wealth", &primal.wealth), ("density", &dual.density)]);
    let result = json!({
        "primal_value": primal.value,
        "dual_value": dual.value,
        "gap": dual.value - primal.value,
        "eta": dual.eta,
        "total_mass": dual.total_mass,
        "martingale_residual": dual.martingale_residual,
        "marginal_link_residual": link,
        "density": dual.density,
    });
    Ok((result, Some(table)))
}

fn superrep_cmd(cfg: &ExperimentConfig) -> Result<(Value, Option<Table>)> {
    let m = load_market(cfg)?;
    let psi = claim_for(&m, cfg.family.is_some())?;
    let rep = superreplicate(&m, &psi, cfg.tol.expect("resolve sets the tolerance"))?;
    let table = state_table(
        &m,
        &[
            ("claim", &psi),
            ("superrep_payoff", &rep.superrep_payoff),
            ("pointwise_infimum", &rep.per_state_infimum),
            ("martingale_weight", &rep.martingale_measure),
        ],
    );
    let result = json!({
        "price": rep.price,
        "portfolio": rep.portfolio,
        "portfolio_range": [
            finite_or_null(rep.portfolio_range.0),
            finite_or_null(rep.portfolio_range.1),
        ],
        "verdict": verdict_name(rep.verdict),
        "certificate": rep.certificate,
        "least_element": rep.least_element.map(|(x, pi)| json!([x, pi])).unwrap_or(Value::Null),
        "superrep_payoff": rep.superrep_payoff,
        "per_state_infimum": rep.per_state_infimum,
        "martingale_measure": rep.martingale_measure,
    });
    Ok((result, Some(table)))
}

fn davis_cmd(cfg: &ExperimentConfig) -> Result<(Value, Option<Table>)> {
    let m = load_market(cfg)?;
    let phi = claim_for(&m, cfg.family.is_some())?;
    let u = utility_of(cfg)?;
    let b = m.endowment.clone();
    let dual_sweep = davis_interval_finite(&m, &u, &b, &phi)?;
    let supergradient = interval_via_supergradient(&m, &u, &b, &phi)?;
    let finite_difference = interval_via_finite_difference(&m, &u, &b, &phi)?;
    let derivative = directional_derivative_lp(&m, &u, &b, &phi)?;
    let intervals = [&dual_sweep, &supergradient, &finite_difference];
    let spread = intervals.iter().map(|iv| iv.midpoint()).fold(f64::NEG_INFINITY, f64::max)
        - intervals.iter().map(|iv| iv.midpoint()).fold(f64::INFINITY, f64::min);
    let table = Table {
        columns: vec!["method", "p_low", "p_high", "width", "midpoint"],
        rows: intervals
            .iter()
            .map(|iv| {
                vec![
                    method_name(iv.method).to_string(),
                    num(iv.p_low),
                    num(iv.p_high),
                    num(iv.width()),
                    num(iv.midpoint()),
                ]
            })
            .collect(),
    };
    let result = json!({
        "dual_sweep": interval_json(&dual_sweep),
        "supergradient": interval_json(&supergradient),
        "finite_difference": interval_json(&finite_difference),
        "directional_derivative": derivative,
        "midpoint_spread": spread,
    });
    Ok((result, Some(table)))
}

fn sweep_cmd(cfg: &ExperimentConfig) -> Result<(Value, Option<Table>)> {
    let name = cfg.family.as_deref().expect("resolve defaults the family");
    family_by_name::<f64>(name)?;
    if name != "csw" {
        return Err(Error::Unsupported(format!("no sweep pipeline for family '{name}'")));
    }
    let report = csw_sweep(cfg.levels.as_ref().expect("resolve defaults the levels"))?;
    let rows_json: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "level": r.level,
                "y_n": r.y_n,
                "pairing_h": r.pairing_h,
                "du_plus": r.du_plus,
                "du_minus": r.du_minus,
                "gap": r.gap,
                "du_plus_error": r.du_plus_error,
                "du_minus_error": r.du_minus_error,
                "binding_wealth": r.binding_wealth,
            })
        })
        .collect();
    let table = Table {
        columns: vec!["N", "y_N", "pairing_H", "du_plus", "du_minus", "gap"],
        rows: report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.level.to_string(),
                    num(r.y_n),
                    num(r.pairing_h),
                    num(r.du_plus),
                    num(r.du_minus),
                    num(r.gap),
                ]
            })
            .collect(),
    };
    let result = json!({
        "test_function": report.test_function.describe(),
        "rows": rows_json,
        "x_grid": report.x_grid,
        "values": report.values,
        "slope_grid": report.slope_grid,
        "concavity_residual": report.concavity_residual,
    });
    Ok((result, Some(table)))
}

/// Canned deflator experiment: the stopped singular drift against a
/// constant-drift control, checkpoint means, and the price interval of a
/// tanh claim. The clock grid is fixed at 1200 steps per block and the
/// control at 64 uniform steps; paths and seed come from the configuration
/// (the control runs on the next seed).
fn mc_cmd(cfg: &ExperimentConfig) -> Result<(Value, Option<Table>)> {
    let paths = cfg.paths.expect("resolve sets paths");
    let seed = cfg.seed.expect("resolve sets the seed");
    let stopped =
        PathModel { horizon: 1.0, n_steps: 1200, lambda: LambdaSpec::DsStopped, sigma: 1.0, seed };
    let control = PathModel {
        horizon: 1.0,
        n_steps: 64,
        lambda: LambdaSpec::Constant(0.8),
        sigma: 1.0,
        seed: seed.wrapping_add(1),
    };
    let stopped_stats = simulate_stochastic_exponential(&stopped, paths)?;
    let control_stats = simulate_stochastic_exponential(&control, paths)?;
    let profile = supermartingale_profile(&stopped, paths)?;
    let interval = example1_interval(&stopped, &tanh_claim()?, paths)?;
    let checkpoints: Vec<Value> = profile
        .iter()
        .map(|p| json!({ "t": p.t, "mean": p.mean, "ci_halfwidth": p.ci_halfwidth }))
        .collect();
    let table = Table {
        columns: vec!["t", "mean", "ci_halfwidth"],
        rows: profile.iter().map(|p| vec![num(p.t), num(p.mean), num(p.ci_halfwidth)]).collect(),
    };
    let result = json!({
        "stopped": stats_json(&stopped_stats),
        "control": {
            "market_price_of_risk": 0.8,
            "seed": control.seed,
            "stats": stats_json(&control_stats),
        },
        "checkpoints": checkpoints,
        "tanh_interval": interval_json(&interval),
    });
    Ok((result, Some(table)))
}

/// First-order optimality ladder of the corrected policy on the canned
/// diffusion (unit volatility and horizon, market price of risk 1/2) with
/// the kinked envelope pair.
fn corrector_cmd(cfg: &ExperimentConfig) -> Result<(Value, Option<Table>)> {
    let ccfg = CorrectorConfig {
        sigma: 1.0,
        market_price_of_risk: 0.5,
        horizon: 1.0,
        utility: utility_of(cfg)?,
        n_paths: cfg.paths.expect("resolve sets paths"),
        seed: cfg.seed.expect("resolve sets the seed"),
    };
    let eps = cfg.eps.as_ref().expect("resolve defaults the ladder");
    let rep = corrector_check(&ccfg, &kinked_envelope()?, eps)?;
    let table = Table {
        columns: vec!["eps", "r", "r_over_eps", "r_ci"],
        rows: (0..rep.eps.len())
            .map(|i| vec![num(rep.eps[i]), num(rep.r[i]), num(rep.r_over_eps[i]), num(rep.r_ci[i])])
            .collect(),
    };
    let result = json!({
        "eps": rep.eps,
        "r": rep.r,
        "r_over_eps": rep.r_over_eps,
        "r_ci": rep.r_ci,
        "theta_hat": rep.theta_hat,
        "notional_hat": rep.notional_hat,
        "corrector_slope": rep.corrector_slope,
        "base_value": rep.base_value,
        "trend_ok": rep.trend_ok,
        "violation": rep.violation,
        "n_paths": rep.n_paths,
    });
    Ok((result, Some(table)))
}
