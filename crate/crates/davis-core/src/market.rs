//! One-period market models on finite and countable state spaces.
//!
//! A [`FiniteMarket`] is a probability vector, a single risky-asset price
//! increment per state, an endowment, and optionally a claim to price.
//! [`CountableMarketFamily`] describes an infinite-state market by closures
//! `n -> (p_n, dS_n, B_n)`; [`truncate`] projects it onto its first `N + 1`
//! states, either renormalizing the probabilities or parking the tail mass
//! in a cemetery state with `dS = 0`.
//!
//! The bundled [`CountableMarketFamily::csw`] family is the countable market
//! on which utility-based prices misbehave in the limit: its truncations are
//! perfectly ordinary, but the associated dual optimizers push mass into the
//! tail states (where `dS_n` approaches -1) as the truncation level grows.
//! The sweep driver in [`crate::davis::sweep`] measures that escape.

use crate::error::{Error, Result};
use crate::lp::{self, LpOutcome, LpProblem, LpRow, Relation, SimplexOpts, VarBound};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Tolerance for "the probabilities sum to one".
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMarket<F> {
    /// Strictly positive, sums to one within [`PROB_SUM_TOL`].
    pub probs: Vec<F>,
    /// Price increment of the risky asset in each state.
    pub ds: Vec<F>,
    /// Random endowment; must be strictly positive where it enters a solve.
    pub endowment: Vec<F>,
    /// Claim to price, if any.
    pub claim: Option<Vec<F>>,
}

impl<F: Real> FiniteMarket<F> {
    pub fn new(
        probs: Vec<F>,
        ds: Vec<F>,
        endowment: Vec<F>,
        claim: Option<Vec<F>>,
    ) -> Result<Self> {
        let m = FiniteMarket { probs, ds, endowment, claim };
        m.validate()?;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// Structural checks: matching lengths, strictly positive probabilities
    /// summing to one, finite entries. Endowment positivity is checked by
    /// the solvers, not here, because a market may carry a claim vector
    /// without ever being used as an endowment.
    pub fn validate(&self) -> Result<()> {
        let n = self.probs.len();
        if n == 0 {
            return Err(Error::InvalidModel("market has no states".into()));
        }
        if self.ds.len() != n || self.endowment.len() != n {
            return Err(Error::InvalidModel(format!(
                "length mismatch: {} probs, {} ds, {} endowment",
                n,
                self.ds.len(),
                self.endowment.len()
            )));
        }
        if let Some(c) = &self.claim {
            if c.len() != n {
                return Err(Error::InvalidModel(format!(
                    "claim has {} entries, expected {n}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel("claim has non-finite entries".into()));
            }
        }
        let mut sum = F::zero();
        for (i, p) in self.probs.iter().enumerate() {
            if !(*p > F::zero()) || !p.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "prob[{i}] = {p} is not strictly positive"
                )));
            }
            sum += *p;
        }
        if (sum - F::one()).abs() > F::of(PROB_SUM_TOL) {
            return Err(Error::InvalidModel(format!("probabilities sum to {sum}, not 1")));
        }
        if self.ds.iter().any(|v| !v.is_finite()) || self.endowment.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite market entries".into()));
        }
        Ok(())
    }

    /// Endowment positivity, required whenever the market enters a utility
    /// maximization.
    pub fn validate_endowment(&self) -> Result<()> {
        for (i, b) in self.endowment.iter().enumerate() {
            if !(*b > F::zero()) {
                return Err(Error::InvalidModel(format!(
                    "endowment[{i}] = {b} must be strictly positive"
                )));
            }
        }
        Ok(())
    }

    pub fn expectation(&self, values: &[F]) -> F {
        self.probs.iter().zip(values).map(|(p, v)| *p * *v).sum()
    }
}

/// Certificate produced by [`check_no_arbitrage`]: either a strictly
/// positive martingale measure, or an explicit arbitrage position.
#[derive(Debug, Clone)]
pub struct NoArbCertificate<F> {
    pub viable: bool,
    /// Strictly positive `q` with unit mass and `<q, ds> = 0`, when viable.
    pub witness: Option<Vec<F>>,
    /// A position with nonnegative, somewhere-positive gains otherwise.
    pub arbitrage_position: Option<F>,
}

/// Decides whether a strictly positive martingale measure exists by solving
/// `max t  s.t.  q >= t, sum q = 1, <q, ds> = 0, t >= 0` as a small LP in
/// the shifted variables `r = q - t`. The optimum is positive exactly when
/// the market is arbitrage-free.
pub fn check_no_arbitrage<F: Real>(m: &FiniteMarket<F>) -> Result<NoArbCertificate<F>> {
    m.validate()?;
    let n = m.n_states();
    if m.ds.iter().all(|d| *d == F::zero()) {
        // Any measure is a martingale measure; report the physical one.
        return Ok(NoArbCertificate {
            viable: true,
            witness: Some(m.probs.clone()),
            arbitrage_position: None,
        });
    }
    let ds_sum: F = m.ds.iter().copied().sum();
    // Variables r_0..r_{n-1}, t; rows: sum r + n t = 1, <r, ds> + t*sum(ds) = 0.
    let mut mass = vec![F::one(); n];
    mass.push(F::of_usize(n));
    let mut pair = m.ds.clone();
    pair.push(ds_sum);
    let mut objective = vec![F::zero(); n];
    objective.push(-F::one());
    let p = LpProblem {
        objective,
        rows: vec![
            LpRow { coeffs: mass, relation: Relation::Eq, rhs: F::one() },
            LpRow { coeffs: pair, relation: Relation::Eq, rhs: F::zero() },
        ],
        bounds: vec![VarBound::NonNeg; n + 1],
    };
    let opts = SimplexOpts { tol: F::of(1e-11), degen_tol: F::of(1e-9), max_iter: 400 * (n + 10) };
    let out = lp::simplex(&p, &opts)?;
    let t_best = match &out {
        LpOutcome::Optimal(s) => s.x[n],
        LpOutcome::Infeasible { .. } => F::zero(),
        LpOutcome::Unbounded { .. } => {
            return Err(Error::Numeric("viability LP cannot be unbounded".into()))
        }
    };
    if t_best > F::of(1e-12) {
        let witness = match out {
            LpOutcome::Optimal(s) => (0..n).map(|i| s.x[i] + t_best).collect::<Vec<_>>(),
            _ => unreachable!(),
        };
        return Ok(NoArbCertificate {
            viable: true,
            witness: Some(witness),
            arbitrage_position: None,
        });
    }
    // One risky asset: failure means the increments never change sign.
    let any_pos = m.ds.iter().any(|d| *d > F::zero());
    let position = if any_pos { F::one() } else { -F::one() };
    Ok(NoArbCertificate { viable: false, witness: None, arbitrage_position: Some(position) })
}

/// Componentwise rescaling of the price increment: `ds~ = scale * ds`.
/// Probabilities, endowment and claim are untouched. Errors on nonpositive
/// or non-finite scale entries.
pub fn tilt_market<F: Real>(m: &FiniteMarket<F>, scale: &[F]) -> Result<FiniteMarket<F>> {
    if scale.len() != m.n_states() {
        return Err(Error::InvalidArgument(format!(
            "scale has {} entries, market has {} states",
            scale.len(),
            m.n_states()
        )));
    }
    if scale.iter().any(|s| !(*s > F::zero()) || !s.is_finite()) {
        return Err(Error::InvalidArgument("tilt scale must be strictly positive".into()));
    }
    let mut tilted = m.clone();
    for (d, s) in tilted.ds.iter_mut().zip(scale) {
        *d *= *s;
    }
    Ok(tilted)
}

type Seq<F> = Arc<dyn Fn(usize) -> F + Send + Sync>;

/// Countable-state market given by term rules; probabilities must be
/// strictly positive and sum to one over all of `n = 0, 1, 2, ...`.
#[derive(Clone)]
pub struct CountableMarketFamily<F> {
    pub name: String,
    pub prob: Seq<F>,
    pub ds: Seq<F>,
    pub endowment: Seq<F>,
}

impl<F> std::fmt::Debug for CountableMarketFamily<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CountableMarketFamily").field("name", &self.name).finish()
    }
}

impl<F: Real> CountableMarketFamily<F> {
    /// The countable market with `p_0 = 3/4`, `p_n = 2^-n / 4`, `dS_0 = 1`,
    /// `dS_n = (1 - n)/n` (so `dS_n` decreases to -1), unit endowment.
    pub fn csw() -> Self {
        CountableMarketFamily {
            name: "csw".into(),
            prob: Arc::new(|n| {
                if n == 0 {
                    F::of(0.75)
                } else {
                    F::of(0.25) * F::of(0.5).powi(n as i32)
                }
            }),
            ds: Arc::new(|n| {
                if n == 0 {
                    F::one()
                } else {
                    (F::one() - F::of_usize(n)) / F::of_usize(n)
                }
            }),
            endowment: Arc::new(|_| F::one()),
        }
    }

    /// Same states with endowment replaced by `rule(n)`.
    pub fn with_endowment(&self, name: &str, rule: Seq<F>) -> Self {
        CountableMarketFamily {
            name: name.into(),
            prob: self.prob.clone(),
            ds: self.ds.clone(),
            endowment: rule,
        }
    }
}

/// Known family names for configuration files.
pub fn family_by_name<F: Real>(name: &str) -> Result<CountableMarketFamily<F>> {
    match name {
        "csw" => Ok(CountableMarketFamily::csw()),
        other => Err(Error::InvalidArgument(format!("unknown market family '{other}'"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Keep states `0..=n` and divide the probabilities by their sum.
    Renormalize,
    /// Keep states `0..=n` and add one absorbing state carrying the tail
    /// mass, with `dS = 0` and the endowment rule evaluated at `n + 1`.
    Cemetery,
}

/// Projects a countable family onto a finite market. `n >= 2` so that the
/// truncation retains both signs of the price increment in families like
/// [`CountableMarketFamily::csw`].
pub fn truncate<F: Real>(
    family: &CountableMarketFamily<F>,
    n: usize,
    mode: TruncationMode,
) -> Result<FiniteMarket<F>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("truncation level must be >= 2, got {n}")));
    }
    let probs_raw: Vec<F> = (0..=n).map(|k| (family.prob)(k)).collect();
    let ds: Vec<F> = (0..=n).map(|k| (family.ds)(k)).collect();
    let endowment: Vec<F> = (0..=n).map(|k| (family.endowment)(k)).collect();
    // Tail-first summation keeps the small terms from being absorbed.
    let total: F = probs_raw.iter().rev().copied().sum();
    match mode {
        TruncationMode::Renormalize => {
            let probs = probs_raw.iter().map(|p| *p / total).collect();
            FiniteMarket::new(probs, ds, endowment, None)
        }
        TruncationMode::Cemetery => {
            let tail = F::one() - total;
            if !(tail > F::zero()) {
                return Err(Error::Numeric(format!(
                    "tail mass {tail} at level {n} is not positive; cemetery state impossible"
                )));
            }
            let mut probs = probs_raw;
            probs.push(tail);
            let mut ds = ds;
            ds.push(F::zero());
            let mut endowment = endowment;
            endowment.push((family.endowment)(n + 1));
            FiniteMarket::new(probs, ds, endowment, None)
        }
    }
}

/// On-disk market representation (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub probs: Vec<f64>,
    #[serde(rename = "dS")]
    pub ds: Vec<f64>,
    pub endowment: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<Vec<f64>>,
}

impl MarketFile {
    pub fn from_market(m: &FiniteMarket<f64>) -> Self {
        MarketFile {
            probs: m.probs.clone(),
            ds: m.ds.clone(),
            endowment: m.endowment.clone(),
            claim: m.claim.clone(),
        }
    }

    pub fn into_market(self) -> Result<FiniteMarket<f64>> {
        FiniteMarket::new(self.probs, self.ds, self.endowment, self.claim)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("market file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("market serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csw64() -> CountableMarketFamily<f64> {
        CountableMarketFamily::csw()
    }

    #[test]
    fn csw_truncation_level_two_is_pinned() {
        let m = truncate(&csw64(), 2, TruncationMode::Renormalize).unwrap();
        let z = 0.75 + 0.125 + 0.0625;
        assert_eq!(m.ds, vec![1.0, 0.0, -0.5]);
        for (got, want) in m.probs.iter().zip([0.75 / z, 0.125 / z, 0.0625 / z]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(m.endowment, vec![1.0; 3]);
    }

    #[test]
    fn truncation_needs_two_downstates() {
        assert!(truncate(&csw64(), 1, TruncationMode::Renormalize).is_err());
        assert!(truncate(&csw64(), 0, TruncationMode::Cemetery).is_err());
    }

    #[test]
    fn csw_tail_mass_is_negligible_past_level_fifty() {
        for n in [50usize, 64, 100] {
            let raw: f64 = (0..=n)
                .rev()
                .map(|k| if k == 0 { 0.75 } else { 0.25 * 0.5f64.powi(k as i32) })
                .sum();
            assert!((1.0 - raw).abs() < 1e-12, "level {n}: tail {}", 1.0 - raw);
        }
    }

    #[test]
    fn cemetery_truncation_adds_flat_state() {
        let m = truncate(&csw64(), 5, TruncationMode::Cemetery).unwrap();
        assert_eq!(m.n_states(), 7);
        assert_eq!(*m.ds.last().unwrap(), 0.0);
        assert!(*m.probs.last().unwrap() > 0.0);
        let sum: f64 = m.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_probabilities() {
        assert!(
            FiniteMarket::new(vec![0.5, 0.5001], vec![1.0, -1.0], vec![1.0, 1.0], None).is_err()
        );
        assert!(FiniteMarket::new(vec![1.0, 0.0], vec![1.0, -1.0], vec![1.0, 1.0], None).is_err());
        assert!(FiniteMarket::<f64>::new(vec![], vec![], vec![], None).is_err());
        assert!(FiniteMarket::new(vec![0.5, 0.5], vec![1.0], vec![1.0, 1.0], None).is_err());
    }

    #[test]
    fn no_arbitrage_certificates() {
        let m = FiniteMarket::<f64>::new(vec![0.5, 0.5], vec![1.0, -1.0], vec![1.0, 1.0], None)
            .unwrap();
        let cert = check_no_arbitrage(&m).unwrap();
        assert!(cert.viable);
        let q = cert.witness.unwrap();
        assert!((q[0] - 0.5).abs() < 1e-9 && (q[1] - 0.5).abs() < 1e-9);

        let up = FiniteMarket::new(vec![0.5, 0.5], vec![1.0, 2.0], vec![1.0, 1.0], None).unwrap();
        let cert = check_no_arbitrage(&up).unwrap();
        assert!(!cert.viable);
        assert_eq!(cert.arbitrage_position, Some(1.0));
        // The position indeed has nonnegative, somewhere-positive gains.
        let pi = cert.arbitrage_position.unwrap();
        assert!(up.ds.iter().all(|d| pi * d >= 0.0));
        assert!(up.ds.iter().any(|d| pi * d > 0.0));

        let flat = FiniteMarket::new(vec![0.3, 0.7], vec![0.0, 0.0], vec![1.0, 1.0], None).unwrap();
        let cert = check_no_arbitrage(&flat).unwrap();
        assert!(cert.viable);
        assert_eq!(cert.witness.unwrap(), vec![0.3, 0.7]);
    }

    /// Independent oracle: for markets whose increments take both signs, a
    /// strictly positive martingale measure can be assembled by averaging
    /// two-point measures over sign-opposite state pairs (plus singletons on
    /// zero-increment states). The LP must agree it is viable and its
    /// witness must verify exactly the same properties.
    #[test]
    fn witness_matches_constructive_oracle() {
        let m = truncate(&csw64(), 5, TruncationMode::Renormalize).unwrap();
        let cert = check_no_arbitrage(&m).unwrap();
        assert!(cert.viable);
        let q = cert.witness.unwrap();
        assert!(q.iter().all(|&v| v > 0.0), "witness strictly positive: {q:?}");
        let mass: f64 = q.iter().sum();
        let pair: f64 = q.iter().zip(&m.ds).map(|(q, d)| q * d).sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert!(pair.abs() < 1e-9);

        // Constructive mixture.
        let n = m.n_states();
        let mut mix = vec![0.0; n];
        let mut parts = 0usize;
        for i in 0..n {
            for j in 0..n {
                if m.ds[i] > 0.0 && m.ds[j] < 0.0 {
                    let wi = -m.ds[j] / (m.ds[i] - m.ds[j]);
                    mix[i] += wi;
                    mix[j] += 1.0 - wi;
                    parts += 1;
                }
            }
            if m.ds[i] == 0.0 {
                mix[i] += 1.0;
                parts += 1;
            }
        }
        for v in mix.iter_mut() {
            *v /= parts as f64;
        }
        assert!(mix.iter().all(|&v| v > 0.0));
        let pair: f64 = mix.iter().zip(&m.ds).map(|(q, d)| q * d).sum();
        assert!(pair.abs() < 1e-12);
    }

    #[test]
    fn tilt_checks_scale() {
        let m = truncate(&csw64(), 3, TruncationMode::Renormalize).unwrap();
        let scale = vec![0.5; 4];
        let t = tilt_market(&m, &scale).unwrap();
        for (td, d) in t.ds.iter().zip(&m.ds) {
            assert!((td - 0.5 * d).abs() < 1e-15);
        }
        assert!(tilt_market(&m, &[0.5; 3]).is_err());
        assert!(tilt_market(&m, &[0.5, 0.5, 0.0, 0.5]).is_err());
        assert!(tilt_market(&m, &[0.5, -0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn market_file_round_trip() {
        let m = FiniteMarket::new(
            vec![0.25, 0.25, 0.5],
            vec![2.0, 0.0, -1.0],
            vec![1.0, 2.0, 3.0],
            Some(vec![1.0, 0.0, 0.0]),
        )
        .unwrap();
        let text = MarketFile::from_market(&m).to_json();
        let back = MarketFile::from_json(&text).unwrap().into_market().unwrap();
        assert_eq!(m, back);
        assert!(text.contains("\"dS\""), "field name is dS: {text}");
    }

    #[test]
    fn market_file_rejects_unknown_fields() {
        let text = r#"{"probs": [1.0], "dS": [0.0], "endowment": [1.0], "drift": 3}"#;
        assert!(MarketFile::from_json(text).is_err());
    }
}
