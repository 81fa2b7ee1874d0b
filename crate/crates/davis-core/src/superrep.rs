//! Superreplication of a contingent claim by cash plus a stock position,
//! and the classification of how tight that hedge is.
//!
//! The cheapest superreplicating endowment solves a two-variable linear
//! program: minimize `x` subject to `x + pi * dS_n >= psi_n` in every
//! state. Its row duals form a martingale probability measure, so the
//! price is also the largest expectation of the claim under any such
//! measure. Beyond the price, this module computes the pointwise lower
//! envelope of all superreplicating payoffs (one auxiliary LP per state)
//! and classifies the claim:
//!
//! * [`Superreplicability::Replicable`]: the claim itself is attainable;
//!   the envelope equals the claim and is spanned by cash and stock.
//! * [`Superreplicability::UniquelySuper`]: the envelope is attainable but
//!   sits strictly above the claim somewhere; the set of superreplicating
//!   payoffs has a least element that is not the claim.
//! * [`Superreplicability::NotUnique`]: the envelope is not attainable;
//!   no cheapest hedge dominates all others pointwise.
//!
//! When the envelope is attainable, its cost always equals the LP price:
//! any cheaper superreplication would have to dominate the least element
//! from strictly below in cost, which forces `(pi - pi_hat) * dS_n` to be
//! bounded away from zero with one sign in every state, impossible when the
//! increments change sign (and vacuous when they are identically zero).

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpOutcome, LpProblem, LpRow, Relation, VarBound};
use crate::market::FiniteMarket;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Superreplicability {
    Replicable,
    UniquelySuper,
    NotUnique,
}

#[derive(Debug, Clone)]
pub struct SuperrepReport {
    /// Minimal initial capital over all superreplicating strategies.
    pub price: f64,
    /// Stock position of the optimal strategy the solver settled on; one
    /// point of `portfolio_range`.
    pub portfolio: f64,
    /// Payoff `price + portfolio * dS_n` of that strategy; dominates the
    /// claim in every state.
    pub superrep_payoff: Vec<f64>,
    /// Range of stock positions among minimal-cost strategies; infinite
    /// endpoints mean the position is unconstrained in that direction.
    pub portfolio_range: (f64, f64),
    /// Martingale probability weights extracted from the LP row duals:
    /// nonnegative, summing to one, orthogonal to the increments, and
    /// pricing the claim at `price`.
    pub martingale_measure: Vec<f64>,
    /// Pointwise infimum of superreplicating payoffs, state by state.
    pub per_state_infimum: Vec<f64>,
    /// `(x, pi)` replicating the infimum profile, when one exists.
    pub least_element: Option<(f64, f64)>,
    pub verdict: Superreplicability,
    /// Human-readable justification of the verdict.
    pub certificate: String,
}

fn check_claim(m: &FiniteMarket<f64>, psi: &[f64]) -> Result<()> {
    m.validate()?;
    if psi.len() != m.n_states() {
        return Err(Error::InvalidArgument(format!(
            "claim has {} states, market has {}",
            psi.len(),
            m.n_states()
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("claim must be finite in every state".into()));
    }
    Ok(())
}

fn superrep_rows(m: &FiniteMarket<f64>, psi: &[f64]) -> Vec<LpRow<f64>> {
    m.ds.iter()
        .zip(psi)
        .map(|(d, p)| LpRow { coeffs: vec![1.0, *d], relation: Relation::Ge, rhs: *p })
        .collect()
}

fn run(problem: &LpProblem<f64>, what: &str) -> Result<crate::lp::LpSolution<f64>> {
    match solve_lp(problem)? {
        LpOutcome::Optimal(sol) => Ok(sol),
        LpOutcome::Unbounded { .. } => {
            Err(Error::InvalidModel(format!("{what} is unbounded: the market admits arbitrage")))
        }
        LpOutcome::Infeasible { .. } => {
            Err(Error::Numeric(format!("{what} unexpectedly infeasible")))
        }
    }
}

/// Best pointwise fit of `target` by `x + pi * dS`; returns the
/// coefficients and the sup-norm residual.
fn span_fit(ds: &[f64], target: &[f64]) -> ((f64, f64), f64) {
    let n = ds.len() as f64;
    let mean_d = ds.iter().sum::<f64>() / n;
    let mean_t = target.iter().sum::<f64>() / n;
    let var_d: f64 = ds.iter().map(|d| (d - mean_d) * (d - mean_d)).sum();
    let scale: f64 = ds.iter().map(|d| d * d).sum::<f64>().max(1.0);
    let (x, pi) = if var_d <= 1e-24 * scale {
        // Increments are constant across states: only the cash leg moves.
        (mean_t, 0.0)
    } else {
        let cov: f64 = ds.iter().zip(target).map(|(d, t)| (d - mean_d) * (t - mean_t)).sum();
        let pi = cov / var_d;
        (mean_t - pi * mean_d, pi)
    };
    let resid = ds.iter().zip(target).map(|(d, t)| (x + pi * d - t).abs()).fold(0.0f64, f64::max);
    ((x, pi), resid)
}

/// Pointwise infimum of superreplicating payoffs. Each state solves its own
/// LP; the objective there is one of its own constraints, so the value is
/// finite whenever superreplication itself is well posed.
pub fn pointwise_infimum(m: &FiniteMarket<f64>, psi: &[f64]) -> Result<Vec<f64>> {
    check_claim(m, psi)?;
    let rows = superrep_rows(m, psi);
    let mut env = Vec::with_capacity(m.n_states());
    for k in 0..m.n_states() {
        let p = LpProblem {
            objective: vec![1.0, m.ds[k]],
            rows: rows.clone(),
            bounds: vec![VarBound::Free, VarBound::Free],
        };
        env.push(run(&p, "per-state envelope problem")?.value);
    }
    Ok(env)
}

/// Whether the claim is attainable exactly by cash plus a stock position,
/// and if so the representation `(x, pi)` with `x + pi * dS = psi`. Decided
/// by a direct span fit, independently of any envelope computation.
pub fn is_replicable(m: &FiniteMarket<f64>, psi: &[f64], tol: f64) -> Result<Option<(f64, f64)>> {
    check_claim(m, psi)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let scale = 1.0 + psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let ((x, pi), resid) = span_fit(&m.ds, psi);
    Ok(if resid <= tol * scale { Some((x, pi)) } else { None })
}

/// Riskless floor extractable from the combined position `B + eps * phi`:
/// the largest initial debt `x` that some stock position keeps covered in
/// every state, i.e. the subreplication price of the position. Computed as
/// the negated superreplication price of the negated payoff.
pub fn lower_envelope(
    m: &FiniteMarket<f64>,
    endowment: &[f64],
    phi: &[f64],
    eps: f64,
) -> Result<f64> {
    check_claim(m, endowment)?;
    check_claim(m, phi)?;
    if !eps.is_finite() {
        return Err(Error::InvalidArgument("perturbation size must be finite".into()));
    }
    let neg: Vec<f64> = endowment.iter().zip(phi).map(|(b, f)| -(b + eps * f)).collect();
    let rows = superrep_rows(m, &neg);
    let sol = run(
        &LpProblem {
            objective: vec![1.0, 0.0],
            rows,
            bounds: vec![VarBound::Free, VarBound::Free],
        },
        "subreplication problem",
    )?;
    Ok(-sol.value)
}

/// Prices the claim, extracts the dual martingale measure, and classifies
/// the hedge. `tol` is the relative feature scale for deciding whether two
/// payoff profiles coincide.
pub fn superreplicate(m: &FiniteMarket<f64>, psi: &[f64], tol: f64) -> Result<SuperrepReport> {
    check_claim(m, psi)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let rows = superrep_rows(m, psi);
    let bounds = vec![VarBound::Free, VarBound::Free];
    let price_sol = run(
        &LpProblem { objective: vec![1.0, 0.0], rows: rows.clone(), bounds: bounds.clone() },
        "superreplication problem",
    )?;
    let price = price_sol.value;
    let portfolio = price_sol.x[1];
    let superrep_payoff: Vec<f64> = m.ds.iter().map(|d| price + portfolio * d).collect();
    let martingale_measure = price_sol.duals.clone();

    // Range of optimal positions: pin the capital at the price (with a hair
    // of slack so float-optimal bases stay feasible) and push pi both ways.
    let mut range_rows = rows.clone();
    range_rows.push(LpRow {
        coeffs: vec![1.0, 0.0],
        relation: Relation::Le,
        rhs: price + 1e-9 * (1.0 + price.abs()),
    });
    let mut pi_bounds = [0.0f64; 2];
    let mut unbounded = [false; 2];
    for (slot, sign) in [(0usize, 1.0f64), (1usize, -1.0f64)] {
        let p = LpProblem {
            objective: vec![0.0, sign],
            rows: range_rows.clone(),
            bounds: bounds.clone(),
        };
        match solve_lp(&p)? {
            LpOutcome::Optimal(sol) => pi_bounds[slot] = sign * sol.value,
            LpOutcome::Unbounded { .. } => unbounded[slot] = true,
            LpOutcome::Infeasible { .. } => {
                return Err(Error::Numeric("position-range problem unexpectedly infeasible".into()))
            }
        }
    }
    let portfolio_range = (
        if unbounded[0] { f64::NEG_INFINITY } else { pi_bounds[0] },
        if unbounded[1] { f64::INFINITY } else { pi_bounds[1] },
    );

    let per_state_infimum = pointwise_infimum(m, psi)?;
    let scale = 1.0
        + psi.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        + per_state_infimum.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let ((x, pi), resid) = span_fit(&m.ds, &per_state_infimum);
    let attainable = resid <= tol * scale;
    let matches_claim =
        per_state_infimum.iter().zip(psi).all(|(e, p)| (e - p).abs() <= tol * scale);
    let (verdict, certificate) = if attainable && matches_claim {
        (
            Superreplicability::Replicable,
            format!("claim equals {x:.6} + {pi:.6} * dS in every state"),
        )
    } else if attainable {
        (
            Superreplicability::UniquelySuper,
            format!(
                "dominating payoffs have the attainable least element {x:.6} + {pi:.6} * dS, \
                 strictly above the claim somewhere"
            ),
        )
    } else {
        (
            Superreplicability::NotUnique,
            format!(
                "pointwise infimum of dominating payoffs is not attainable: best span fit \
                 leaves sup-norm residual {resid:.3e}"
            ),
        )
    };
    let least_element = if attainable { Some((x, pi)) } else { None };
    Ok(SuperrepReport {
        price,
        portfolio,
        superrep_payoff,
        portfolio_range,
        martingale_measure,
        per_state_infimum,
        least_element,
        verdict,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand::rngs::SmallRng;

    fn market(ds: Vec<f64>) -> FiniteMarket<f64> {
        let n = ds.len();
        let probs = vec![1.0 / n as f64; n];
        let endowment = vec![1.0; n];
        FiniteMarket::new(probs, ds, endowment, None).unwrap()
    }

    #[test]
    fn three_state_envelope_is_not_attainable() {
        let m = market(vec![1.0, 0.0, -1.0]);
        let psi = [-1.0, 0.0, -1.0];
        let rep = superreplicate(&m, &psi, 1e-9).unwrap();
        assert!(rep.price.abs() < 1e-9, "price {}", rep.price);
        assert_eq!(rep.verdict, Superreplicability::NotUnique);
        assert!(rep.least_element.is_none());
        // The envelope coincides with the claim pointwise, yet no single
        // strategy attains it: that is exactly the non-uniqueness.
        for (e, p) in rep.per_state_infimum.iter().zip(&psi) {
            assert!((e - p).abs() < 1e-9);
        }
        assert!((rep.portfolio_range.0 + 1.0).abs() < 1e-6, "{:?}", rep.portfolio_range);
        assert!((rep.portfolio_range.1 - 1.0).abs() < 1e-6, "{:?}", rep.portfolio_range);
        // Unique dual optimizer: all mass on the middle state.
        let q = &rep.martingale_measure;
        assert!((q[0]).abs() < 1e-9 && (q[1] - 1.0).abs() < 1e-9 && (q[2]).abs() < 1e-9);
    }

    #[test]
    fn the_stock_itself_is_replicable() {
        let m = market(vec![0.5, -0.25, 1.5]);
        let psi = m.ds.clone();
        let rep = superreplicate(&m, &psi, 1e-9).unwrap();
        assert_eq!(rep.verdict, Superreplicability::Replicable);
        assert!(rep.price.abs() < 1e-9);
        let (x, pi) = rep.least_element.unwrap();
        assert!(x.abs() < 1e-9 && (pi - 1.0).abs() < 1e-9);
        assert!((rep.portfolio_range.0 - 1.0).abs() < 1e-6);
        assert!((rep.portfolio_range.1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_claims_cost_their_level() {
        let m = market(vec![2.0, -1.0]);
        let rep = superreplicate(&m, &[0.75, 0.75], 1e-9).unwrap();
        assert_eq!(rep.verdict, Superreplicability::Replicable);
        assert!((rep.price - 0.75).abs() < 1e-9);
        let (x, pi) = rep.least_element.unwrap();
        assert!((x - 0.75).abs() < 1e-9 && pi.abs() < 1e-9);
    }

    #[test]
    fn two_state_markets_replicate_everything() {
        let mut rng = SmallRng::seed_from_u64(11);
        for _ in 0..40 {
            let m = market(vec![rng.random_range(0.1..2.0), -rng.random_range(0.1..2.0)]);
            let psi = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let rep = superreplicate(&m, &psi, 1e-8).unwrap();
            assert_eq!(rep.verdict, Superreplicability::Replicable);
        }
    }

    #[test]
    fn flat_market_prices_the_maximum() {
        let m = market(vec![0.0, 0.0, 0.0]);
        let rep = superreplicate(&m, &[1.0, 4.0, 2.0], 1e-9).unwrap();
        assert!((rep.price - 4.0).abs() < 1e-9);
        // The position is a free rider here.
        assert!(rep.portfolio_range.0.is_infinite() && rep.portfolio_range.1.is_infinite());
        assert_eq!(rep.verdict, Superreplicability::UniquelySuper);
        for e in &rep.per_state_infimum {
            assert!((e - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn one_sided_increments_are_rejected() {
        let m = market(vec![1.0, 2.0]);
        assert!(matches!(superreplicate(&m, &[0.0, 0.0], 1e-9), Err(Error::InvalidModel(_))));
    }

    /// Independent price oracle: in one period with cash and one stock, the
    /// superreplication price is the maximum of `E_q[psi]` over the
    /// vertices of the martingale polytope, and every vertex is supported
    /// on a zero increment or on a (+,-) pair of increments.
    fn vertex_price_oracle(ds: &[f64], psi: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (k, d) in ds.iter().enumerate() {
            if *d == 0.0 {
                best = best.max(psi[k]);
            }
        }
        for (i, di) in ds.iter().enumerate() {
            if *di <= 0.0 {
                continue;
            }
            for (j, dj) in ds.iter().enumerate() {
                if *dj >= 0.0 {
                    continue;
                }
                let qi = -dj / (di - dj);
                let qj = di / (di - dj);
                best = best.max(qi * psi[i] + qj * psi[j]);
            }
        }
        best
    }

    #[test]
    fn price_matches_vertex_enumeration() {
        let mut rng = SmallRng::seed_from_u64(4242);
        for case in 0..100 {
            let n = rng.random_range(3..=6);
            let mut ds: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-2.0..2.0) })
                .collect();
            ds[0] = rng.random_range(0.1..2.0);
            ds[1] = -rng.random_range(0.1..2.0);
            let psi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = market(ds.clone());
            let rep = superreplicate(&m, &psi, 1e-8).unwrap();
            let oracle = vertex_price_oracle(&ds, &psi);
            assert!(
                (rep.price - oracle).abs() < 1e-8,
                "case {case}: lp {} vs vertices {oracle}",
                rep.price
            );
            // Dual weights must really be a martingale measure that prices
            // the claim at the optimum.
            let q = &rep.martingale_measure;
            let total: f64 = q.iter().sum();
            let drift: f64 = q.iter().zip(&ds).map(|(a, b)| a * b).sum();
            let val: f64 = q.iter().zip(&psi).map(|(a, b)| a * b).sum();
            assert!(q.iter().all(|v| *v >= -1e-9), "case {case}: {q:?}");
            assert!((total - 1.0).abs() < 1e-8, "case {case}: mass {total}");
            assert!(drift.abs() < 1e-8, "case {case}: drift {drift}");
            assert!((val - rep.price).abs() < 1e-7, "case {case}");
            // The reported strategy must actually dominate the claim.
            for ((w, p), d) in rep.superrep_payoff.iter().zip(&psi).zip(&ds) {
                assert!(*w >= p - 1e-9, "case {case}: payoff {w} under claim {p}");
                assert!((w - (rep.price + rep.portfolio * d)).abs() < 1e-12);
            }
            // When the envelope is attainable its cost must be the price.
            if let Some((x, _)) = rep.least_element {
                assert!((x - rep.price).abs() < 1e-7, "case {case}: least {x}");
            }
        }
    }

    #[test]
    fn replication_check_agrees_with_verdict() {
        let mut rng = SmallRng::seed_from_u64(31_337);
        for case in 0..60 {
            let n = rng.random_range(2..=6);
            let mut ds: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            ds[0] = rng.random_range(0.1..1.5);
            ds[1] = -rng.random_range(0.1..1.5);
            let m = market(ds.clone());
            // Half the cases are spanned by construction, half are random.
            let psi: Vec<f64> = if case % 2 == 0 {
                let x = rng.random_range(-1.0..1.0);
                let pi = rng.random_range(-2.0..2.0);
                ds.iter().map(|d| x + pi * d).collect()
            } else {
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
            };
            let direct = is_replicable(&m, &psi, 1e-9).unwrap();
            let rep = superreplicate(&m, &psi, 1e-9).unwrap();
            assert_eq!(
                direct.is_some(),
                rep.verdict == Superreplicability::Replicable,
                "case {case}: {:?} vs {:?}",
                direct,
                rep.verdict
            );
            if let Some((x, pi)) = direct {
                for (p, d) in psi.iter().zip(&ds) {
                    assert!((x + pi * d - p).abs() < 1e-8, "case {case}");
                }
            }
        }
    }

    #[test]
    fn riskless_floor_matches_worst_case_pricing() {
        let m = market(vec![1.0, 0.0, -0.5]);
        let b = vec![2.0, 2.0, 2.0];
        let zero = vec![0.0; 3];
        // A constant position floors at its own level, for any perturbation
        // scale in the zero direction.
        assert!((lower_envelope(&m, &b, &zero, 0.0).unwrap() - 2.0).abs() < 1e-9);
        assert!((lower_envelope(&m, &b, &zero, 7.5).unwrap() - 2.0).abs() < 1e-9);

        // The floor is the worst-case martingale expectation: the negated
        // vertex oracle on the negated payoff.
        let mut rng = SmallRng::seed_from_u64(2_024);
        for case in 0..60 {
            let n = rng.random_range(2..=6);
            let mut ds: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            ds[0] = rng.random_range(0.1..1.5);
            ds[1] = -rng.random_range(0.1..1.5);
            let m = market(ds.clone());
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eps = rng.random_range(0.0..0.5);
            let floor = lower_envelope(&m, &b, &phi, eps).unwrap();
            let neg: Vec<f64> = b.iter().zip(&phi).map(|(bb, f)| -(bb + eps * f)).collect();
            let oracle = -vertex_price_oracle(&ds, &neg);
            assert!((floor - oracle).abs() < 1e-8, "case {case}: {floor} vs {oracle}");
            // Concavity in eps on a three-point stencil.
            let lo = lower_envelope(&m, &b, &phi, eps - 0.1).unwrap();
            let hi = lower_envelope(&m, &b, &phi, eps + 0.1).unwrap();
            assert!(floor >= 0.5 * (lo + hi) - 1e-9, "case {case}");
        }
    }

    #[test]
    fn price_respects_affine_moves_in_the_claim() {
        let mut rng = SmallRng::seed_from_u64(999);
        for _ in 0..100 {
            let n = rng.random_range(2..=12);
            let mut ds: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            ds[0] = ds[0].abs().max(0.2);
            if n > 1 {
                ds[1] = -ds[1].abs().min(-0.2).abs().max(0.2) * 1.0;
                ds[1] = -ds[1].abs();
            }
            let m = market(ds.clone());
            let psi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let alpha = rng.random_range(0.1..3.0);
            let beta = rng.random_range(-2.0..2.0);
            let gamma = rng.random_range(-2.0..2.0);
            let moved: Vec<f64> =
                psi.iter().zip(&ds).map(|(p, d)| alpha * p + beta + gamma * d).collect();
            let base = superreplicate(&m, &psi, 1e-8).unwrap();
            let shifted = superreplicate(&m, &moved, 1e-8).unwrap();
            assert!(
                (shifted.price - (alpha * base.price + beta)).abs() < 1e-7,
                "affine covariance broke: {} vs {}",
                shifted.price,
                alpha * base.price + beta
            );
        }
    }
}
