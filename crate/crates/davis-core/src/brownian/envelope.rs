//! Endowment and claim profiles as functions of the terminal driver value,
//! and the one-sided derivatives of their lower envelope
//! `L(eps) = inf_a (B(a) + eps * phi(a))`.
//!
//! `L` is an infimum of functions affine in `eps`, hence concave; its
//! one-sided derivatives at zero exist and bound each other,
//! `L'(0+) <= L'(0-)`. They are the only envelope inputs the interval
//! endpoint formulas need: the upper envelope `sup_a (eps * phi - B)`
//! equals `-L(-eps)`, so its right derivative at zero is `L'(0-)` and no
//! separate maximization is required.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::davis::probe_derivative;
use crate::error::{Error, Result};
use crate::numerics::{golden_max, DerivEstimate, Side};

/// Shrinking perturbation sizes for the one-sided envelope quotients.
pub(crate) const EPS_LADDER: [f64; 3] = [0.08, 0.04, 0.02];

/// Grid density for scans over a claim's search domain.
const SCAN_POINTS: usize = 801;

/// Relative improvement below which a minimum found at the search boundary
/// counts as attained (the profile has saturated, e.g. a tanh tail).
const SATURATION_RTOL: f64 = 1e-10;

/// A scalar profile of the terminal driver value: total on the real line,
/// with a finite search window used for extremes and validation.
pub struct ClaimFunction {
    f: Box<dyn Fn(f64) -> f64 + Sync>,
    lo: f64,
    hi: f64,
    grid_sup_abs: f64,
}

impl std::fmt::Debug for ClaimFunction {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("ClaimFunction")
            .field("domain", &(self.lo, self.hi))
            .field("grid_sup_abs", &self.grid_sup_abs)
            .finish()
    }
}

impl ClaimFunction {
    /// Wraps a profile with its search window. The function is evaluated on
    /// a dense grid over the window; any non-finite value is rejected.
    pub fn new(f: impl Fn(f64) -> f64 + Sync + 'static, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "search window [{lo}, {hi}] must be finite and ordered"
            )));
        }
        let mut sup = 0.0f64;
        for k in 0..SCAN_POINTS {
            let a = lo + (hi - lo) * k as f64 / (SCAN_POINTS - 1) as f64;
            let v = f(a);
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!("profile is not finite at {a}: {v}")));
            }
            sup = sup.max(v.abs());
        }
        Ok(ClaimFunction { f: Box::new(f), lo, hi, grid_sup_abs: sup })
    }

    /// The zero profile on a default window.
    pub fn zero() -> Self {
        ClaimFunction::new(|_| 0.0, -1.0, 1.0).expect("the zero profile is finite")
    }

    pub fn eval(&self, a: f64) -> f64 {
        (self.f)(a)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Largest absolute value seen on the validation grid.
    pub fn sup_abs(&self) -> f64 {
        self.grid_sup_abs
    }

    /// Global minimum `(argmin, min)` over the search window, with the
    /// boundary escape rule of [`robust_min`].
    pub fn infimum(&self) -> Result<(f64, f64)> {
        robust_min(&self.f, self.lo, self.hi)
    }

    /// Global maximum `(argmax, max)` over the search window.
    pub fn supremum(&self) -> Result<(f64, f64)> {
        let f = &self.f;
        let (a, neg) = robust_min(&|x| -f(x), self.lo, self.hi)?;
        Ok((a, -neg))
    }
}

/// Minimizes over `[lo, hi]` by a dense scan followed by golden refinement
/// of every sampled basin. Refining only the best grid point would tie the
/// result to the grid's basin choice, and near-tied basins then inject
/// discontinuous noise into envelope values sampled across several offsets;
/// refining each basin keeps the global minimum to refinement accuracy.
fn multi_basin_min(f: &(impl Fn(f64) -> f64 + ?Sized), lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..SCAN_POINTS).map(|k| lo + step * k as f64).collect();
    let vs: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
    let mut best = (xs[0], vs[0]);
    for i in 0..SCAN_POINTS {
        let left_ok = i == 0 || vs[i] <= vs[i - 1];
        let right_ok = i + 1 == SCAN_POINTS || vs[i] < vs[i + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let bracket_lo = if i == 0 { lo } else { xs[i - 1] };
        let bracket_hi = if i + 1 == SCAN_POINTS { hi } else { xs[i + 1] };
        let (x, neg) = golden_max(|x| -f(x), bracket_lo, bracket_hi, xtol, 200);
        let (x, v) = if -neg <= vs[i] { (x, -neg) } else { (xs[i], vs[i]) };
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Minimizes over `[lo, hi]` by [`multi_basin_min`]. A minimum at the
/// boundary triggers one centered doubling of the window: if the doubled
/// window improves the value by more than a saturation tolerance, the
/// minimum is not attained and the search fails; otherwise the (possibly
/// marginally better) doubled result stands.
pub(crate) fn robust_min(
    f: &(impl Fn(f64) -> f64 + ?Sized),
    lo: f64,
    hi: f64,
) -> Result<(f64, f64)> {
    let xtol = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
    let (x1, v1) = multi_basin_min(f, lo, hi, xtol);
    if !v1.is_finite() {
        return Err(Error::Numeric(format!("profile minimum is not finite near {x1}")));
    }
    let edge = 1e-3 * (hi - lo);
    if x1 - lo > edge && hi - x1 > edge {
        return Ok((x1, v1));
    }
    let half = 0.5 * (hi - lo);
    let (x2, v2) = multi_basin_min(f, lo - half, hi + half, xtol);
    if v2 < v1 - SATURATION_RTOL * (1.0 + v1.abs()) {
        return Err(Error::Search(format!(
            "minimum keeps falling at the search boundary ({v1} at {x1}, then {v2} at {x2}); \
             enlarge the window or bound the profile"
        )));
    }
    Ok(if v2 <= v1 { (x2, v2) } else { (x1, v1) })
}

/// Endowment profile `B` and claim profile `phi`, both functions of the
/// terminal driver value. `B` must be strictly positive.
#[derive(Debug)]
pub struct EnvelopeFunctions {
    pub b: ClaimFunction,
    pub phi: ClaimFunction,
}

impl EnvelopeFunctions {
    pub fn new(b: ClaimFunction, phi: ClaimFunction) -> Result<Self> {
        let (at, inf_b) = b.infimum()?;
        if inf_b <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "endowment profile must stay positive; found {inf_b} at {at}"
            )));
        }
        Ok(EnvelopeFunctions { b, phi })
    }

    /// Lower envelope `inf_a (B(a) + eps * phi(a))`, minimized over the
    /// union of the two search windows.
    pub fn lower_envelope(&self, eps: f64) -> Result<f64> {
        let lo = self.b.lo.min(self.phi.lo);
        let hi = self.b.hi.max(self.phi.hi);
        let b = &self.b.f;
        let phi = &self.phi.f;
        robust_min(&|a| b(a) + eps * phi(a), lo, hi).map(|(_, v)| v)
    }
}

/// One-sided derivatives of the lower envelope at zero.
#[derive(Debug, Clone)]
pub struct EnvelopeSlopes {
    pub slope_plus: DerivEstimate<f64>,
    pub slope_minus: DerivEstimate<f64>,
    /// Envelope value at zero, `inf B`.
    pub b0: f64,
    /// Searched bound on `sup |phi|`; both slopes are within it up to
    /// differencing error.
    pub sup_phi: f64,
}

/// Estimates `L'(0+)` and `L'(0-)`: one-sided quotients on the shrinking
/// ladder, extrapolated to zero, then projected into the bracket the
/// quotients themselves certify. Concavity makes every right quotient a
/// lower bound for `L'(0+)` and every left quotient an upper bound for
/// `L'(0-)`, so the tightest rung pair brackets both slopes; the projection
/// keeps extrapolation from reaching across an envelope kink at a positive
/// offset (the minimizing state can migrate between basins as the offset
/// grows), where its smoothness assumption fails. Verifies on the way that
/// the sampled envelope is concave and the slopes respect the claim bound.
pub fn envelope_derivatives(env: &EnvelopeFunctions) -> Result<EnvelopeSlopes> {
    // The concavity sweep and the quotient rungs share offsets, so memoize
    // the minimizations.
    let cache: RefCell<HashMap<u64, f64>> = RefCell::new(HashMap::new());
    let l = |eps: f64| -> Result<f64> {
        if let Some(v) = cache.borrow().get(&eps.to_bits()) {
            return Ok(*v);
        }
        let v = env.lower_envelope(eps)?;
        cache.borrow_mut().insert(eps.to_bits(), v);
        Ok(v)
    };
    let b0 = l(0.0)?;
    for &h in &EPS_LADDER {
        let second = l(h)? - 2.0 * b0 + l(-h)?;
        if second > 1e-9 * (1.0 + b0.abs()) {
            return Err(Error::Numeric(format!(
                "sampled envelope is not concave at step {h}: second difference {second}"
            )));
        }
    }
    let plus = probe_derivative(&l, b0, Some(Side::Plus), &EPS_LADDER)?;
    let minus = probe_derivative(&l, b0, Some(Side::Minus), &EPS_LADDER)?;
    let mut lo = *plus.quotients.last().expect("the ladder is nonempty");
    let mut hi = *minus.quotients.last().expect("the ladder is nonempty");
    if lo > hi {
        // The certified bounds can only misorder by minimizer noise.
        let mid = 0.5 * (lo + hi);
        lo = mid;
        hi = mid;
    }
    let project = |est: DerivEstimate<f64>| -> DerivEstimate<f64> {
        let v = est.value.clamp(lo, hi);
        DerivEstimate {
            error: est.error.max((v - est.value).abs()),
            value: v,
            quotients: est.quotients,
        }
    };
    let mut slope_plus = project(plus);
    let mut slope_minus = project(minus);
    if slope_plus.value > slope_minus.value {
        // Both extrapolations landed inside the bracket but crossed; the
        // midpoint is the order-respecting point closest to both.
        let mid = 0.5 * (slope_plus.value + slope_minus.value);
        slope_plus.error = slope_plus.error.max(slope_plus.value - mid);
        slope_minus.error = slope_minus.error.max(mid - slope_minus.value);
        slope_plus.value = mid;
        slope_minus.value = mid;
    }
    // The raw grid scan can under-read a peak that falls between grid
    // points; the slope bound needs the searched extremes.
    let (_, phi_min) = env.phi.infimum()?;
    let (_, phi_max) = env.phi.supremum()?;
    let bound = phi_max.abs().max(phi_min.abs());
    for est in [&slope_plus, &slope_minus] {
        if est.value.abs() > bound + est.error + 1e-7 * (1.0 + bound) {
            return Err(Error::Numeric(format!(
                "envelope slope {} exceeds the claim bound {bound}",
                est.value
            )));
        }
    }
    if slope_plus.value > slope_minus.value + slope_plus.error + slope_minus.error + 1e-9 {
        return Err(Error::Numeric(format!(
            "one-sided slopes are misordered: {} on the right, {} on the left",
            slope_plus.value, slope_minus.value
        )));
    }
    Ok(EnvelopeSlopes { slope_plus, slope_minus, b0, sup_phi: bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_claim() -> ClaimFunction {
        ClaimFunction::new(|a: f64| a.tanh(), -60.0, 60.0).unwrap()
    }

    #[test]
    fn smooth_endowment_has_no_kink() {
        let b = ClaimFunction::new(|a: f64| 2.0 + a * a / (1.0 + a * a), -60.0, 60.0).unwrap();
        let env = EnvelopeFunctions::new(b, tanh_claim()).unwrap();
        let s = envelope_derivatives(&env).unwrap();
        // Near zero the objective is 2 + a^2 + eps * a, so the envelope is
        // 2 - eps^2 / 4: both one-sided slopes vanish. The difference
        // quotients are -h/4 exactly, so one extrapolation level leaves a
        // residual of order h^2 on the coarsest rung.
        assert!((s.b0 - 2.0).abs() < 1e-12, "b0 = {}", s.b0);
        assert!(s.slope_plus.value.abs() < 2e-5, "{:?}", s.slope_plus);
        assert!(s.slope_minus.value.abs() < 2e-5, "{:?}", s.slope_minus);
        assert!((s.sup_phi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_bump_endowment_has_the_unit_kink() {
        let b = ClaimFunction::new(|a: f64| 2.0 + (-a * a).exp(), -60.0, 60.0).unwrap();
        let env = EnvelopeFunctions::new(b, tanh_claim()).unwrap();
        let s = envelope_derivatives(&env).unwrap();
        // The bump vanishes in the tails where tanh saturates, so the
        // envelope is exactly 2 - |eps| on the ladder.
        assert_eq!(s.b0, 2.0);
        assert!((s.slope_plus.value + 1.0).abs() < 1e-12, "{:?}", s.slope_plus);
        assert!((s.slope_minus.value - 1.0).abs() < 1e-12, "{:?}", s.slope_minus);
    }

    #[test]
    fn zero_claim_gives_zero_slopes() {
        let b = ClaimFunction::new(|a: f64| 2.0 + (-a * a).exp(), -60.0, 60.0).unwrap();
        let env = EnvelopeFunctions::new(b, ClaimFunction::zero()).unwrap();
        let s = envelope_derivatives(&env).unwrap();
        assert_eq!(s.slope_plus.value, 0.0);
        assert_eq!(s.slope_minus.value, 0.0);
        assert_eq!(s.b0, 2.0);
    }

    #[test]
    fn slopes_respect_the_claim_bound() {
        // Profiles with attained minima: oscillatory, kinked, and
        // Gaussian-tailed (the tails saturate exactly, so the minimum is a
        // plateau rather than an escape to the boundary).
        let cases: [(fn(f64) -> f64, fn(f64) -> f64); 3] = [
            (|a| 1.5 + 0.3 * (a - 0.7).cos() + a * a / (4.0 + a * a), |a| 0.4 * (1.3 * a).sin()),
            (|a| 3.0 + (a * a - 1.0).abs() / (1.0 + a * a), |a| (a - 0.2).tanh() * 0.8),
            (|a| 2.0 + (-0.5 * a * a).exp(), |a| 0.6 * (-(a + 1.0) * (a + 1.0)).exp()),
        ];
        for (bf, pf) in cases {
            let b = ClaimFunction::new(bf, -40.0, 40.0).unwrap();
            let phi = ClaimFunction::new(pf, -40.0, 40.0).unwrap();
            let bound = phi.sup_abs();
            let env = EnvelopeFunctions::new(b, phi).unwrap();
            let s = envelope_derivatives(&env).unwrap();
            for est in [&s.slope_plus, &s.slope_minus] {
                assert!(
                    est.value.abs() <= bound + est.error + 1e-7,
                    "slope {} vs bound {bound}",
                    est.value
                );
            }
            assert!(s.slope_plus.value <= s.slope_minus.value + 1e-9);
        }
    }

    #[test]
    fn extremes_search_the_window_robustly() {
        let phi = tanh_claim();
        let (_, lo) = phi.infimum().unwrap();
        let (_, hi) = phi.supremum().unwrap();
        assert_eq!(lo, -1.0);
        assert_eq!(hi, 1.0);
        let hump =
            ClaimFunction::new(|a: f64| (-(a - 3.0) * (a - 3.0)).exp(), -20.0, 20.0).unwrap();
        let (arg, v) = hump.supremum().unwrap();
        assert!((arg - 3.0).abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unattained_minima_are_rejected() {
        let b = ClaimFunction::new(|a: f64| 2.0 + (-a * a).exp(), -30.0, 30.0).unwrap();
        let runaway = ClaimFunction::new(|a: f64| -a, -30.0, 30.0).unwrap();
        let env = EnvelopeFunctions::new(b, runaway).unwrap();
        assert!(matches!(envelope_derivatives(&env), Err(Error::Search(_))));
    }

    #[test]
    fn construction_validates_the_inputs() {
        assert!(matches!(
            ClaimFunction::new(|a: f64| 1.0 / a, -1.0, 1.0),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            ClaimFunction::new(|a: f64| a, 1.0, -1.0),
            Err(Error::InvalidArgument(_))
        ));
        // An endowment whose attained minimum is negative cannot price
        // against a positive-wealth utility.
        let b = ClaimFunction::new(|a: f64| a * a - 1.0, -5.0, 5.0).unwrap();
        assert!(matches!(
            EnvelopeFunctions::new(b, ClaimFunction::zero()),
            Err(Error::InvalidModel(_))
        ));
    }
}
