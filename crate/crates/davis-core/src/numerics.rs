//! One-dimensional numeric kernels shared by the solvers: golden-section
//! search, bracketed root finding, and Richardson-extrapolated difference
//! quotients (one-sided and central).

use crate::error::{Error, Result};
use crate::scalar::Real;

const INVPHI: f64 = 0.618_033_988_749_894_9; // 1/phi
const INVPHI2: f64 = 0.381_966_011_250_105_1; // 1/phi^2

/// Maximizes a unimodal `f` on `[a, b]` by golden-section search.
/// Returns `(argmax, max)`; `xtol` is an absolute width target.
pub fn golden_max<F: Real>(f: impl Fn(F) -> F, a: F, b: F, xtol: F, max_iter: usize) -> (F, F) {
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let invphi = F::of(INVPHI);
    let invphi2 = F::of(INVPHI2);
    let mut h = b - a;
    let mut c = a + invphi2 * h;
    let mut d = a + invphi * h;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if h <= xtol {
            break;
        }
        h *= invphi;
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = a + invphi2 * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimizes `f` on `[a, b]` by a dense scan over `n_grid` points followed by
/// golden-section refinement around the best cell. Intended for continuous
/// objectives that need not be unimodal (envelope computations).
/// Returns `(argmin, min)`.
pub fn grid_then_golden_min<F: Real>(
    f: impl Fn(F) -> F,
    a: F,
    b: F,
    n_grid: usize,
    xtol: F,
) -> (F, F) {
    let n = n_grid.max(3);
    let step = (b - a) / F::of_usize(n - 1);
    let mut best_i = 0usize;
    let mut best = f(a);
    for i in 1..n {
        let x = a + step * F::of_usize(i);
        let v = f(x);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let lo = if best_i == 0 { a } else { a + step * F::of_usize(best_i - 1) };
    let hi = if best_i + 1 >= n { b } else { a + step * F::of_usize(best_i + 1) };
    let (x, neg) = golden_max(|x| -f(x), lo, hi, xtol, 200);
    if -neg <= best {
        (x, -neg)
    } else {
        (a + step * F::of_usize(best_i), best)
    }
}

/// Finds the root of a continuous `g` on a bracket `[a, b]` with
/// `sign(g(a)) != sign(g(b))`. Secant steps accelerate plain bisection; a
/// bisection step is forced whenever the secant stalls, so convergence is
/// guaranteed. Infinite endpoint values are treated as signs only.
pub fn bracketed_root<F: Real>(
    g: impl Fn(F) -> F,
    a: F,
    b: F,
    xtol: F,
    max_iter: usize,
) -> Result<F> {
    let (mut a, mut b) = (a, b);
    let mut ga = g(a);
    let mut gb = g(b);
    if ga == F::zero() {
        return Ok(a);
    }
    if gb == F::zero() {
        return Ok(b);
    }
    if ga.signum() == gb.signum() {
        return Err(Error::Numeric(format!(
            "root bracket [{a}, {b}] has no sign change (g(a)={ga}, g(b)={gb})"
        )));
    }
    let two = F::of(2.0);
    for _ in 0..max_iter {
        if (b - a).abs() <= xtol {
            break;
        }
        let mid = a + (b - a) / two;
        // Secant through the bracket endpoints when both values are finite;
        // otherwise fall back to bisection.
        let mut x = mid;
        if ga.is_finite() && gb.is_finite() {
            let denom = gb - ga;
            if denom != F::zero() {
                let sec = a - ga * (b - a) / denom;
                // Accept only clearly interior secant points.
                let margin = (b - a) * F::of(1e-3);
                if sec > a + margin && sec < b - margin {
                    x = sec;
                }
            }
        }
        let gx = g(x);
        if gx == F::zero() {
            return Ok(x);
        }
        if gx.signum() == ga.signum() {
            a = x;
            ga = gx;
        } else {
            b = x;
            gb = gx;
        }
    }
    Ok(a + (b - a) / two)
}

/// Which side of the base point a one-sided quotient approaches from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// A derivative estimate with the raw difference quotients that produced it
/// and a heuristic error bound (difference of the last two extrapolants).
#[derive(Debug, Clone)]
pub struct DerivEstimate<F> {
    pub value: F,
    pub error: F,
    pub quotients: Vec<F>,
}

fn richardson<F: Real>(rows: &[F], order_step: u32) -> (F, F) {
    let n = rows.len();
    let mut t: Vec<Vec<F>> = vec![rows.to_vec()];
    for j in 1..n {
        let factor = F::of(2.0f64.powi((order_step * j as u32) as i32));
        let prev = &t[j - 1];
        let mut row = Vec::with_capacity(n - j);
        for i in 0..n - j {
            row.push((factor * prev[i + 1] - prev[i]) / (factor - F::one()));
        }
        t.push(row);
    }
    let value = t[n - 1][0];
    let error = if n >= 2 {
        (value - t[n - 2][0]).abs() + (value - t[n - 2][1]).abs()
    } else {
        F::infinity()
    };
    (value, error)
}

/// One-sided derivative of `f` at `at` from quotients on a halving grid
/// `hs = [h, h/2, h/4, ...]` (descending), Richardson-extrapolated at first
/// order. `f_at` is the (possibly expensive) value `f(at)`.
pub fn one_sided_derivative<F: Real>(
    f: impl Fn(F) -> F,
    at: F,
    f_at: F,
    side: Side,
    hs: &[F],
) -> DerivEstimate<F> {
    let s = match side {
        Side::Plus => F::one(),
        Side::Minus => -F::one(),
    };
    let quotients: Vec<F> = hs.iter().map(|&h| (f(at + s * h) - f_at) / (s * h)).collect();
    let (value, error) = richardson(&quotients, 1);
    DerivEstimate { value, error, quotients }
}

/// Central derivative of `f` at `at` on a halving grid, extrapolated at
/// second order (quotient error is O(h^2)).
pub fn central_derivative<F: Real>(f: impl Fn(F) -> F, at: F, hs: &[F]) -> DerivEstimate<F> {
    let two = F::of(2.0);
    let quotients: Vec<F> = hs.iter().map(|&h| (f(at + h) - f(at - h)) / (two * h)).collect();
    let (value, error) = richardson(&quotients, 2);
    DerivEstimate { value, error, quotients }
}

/// Richardson-extrapolates samples taken at a halving parameter grid
/// `x, x/2, x/4, ...` (descending) to parameter zero, assuming a
/// first-order leading error term. For use when exact point values of a
/// one-sided branch are available and only the approach to the branch
/// point needs extrapolating; the `quotients` field carries the raw
/// samples.
pub fn extrapolate_to_limit<F: Real>(samples: &[F]) -> DerivEstimate<F> {
    let (value, error) = richardson(samples, 1);
    DerivEstimate { value, error, quotients: samples.to_vec() }
}

/// Sample mean and 95% confidence half-width (normal approximation).
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "need at least two samples for a confidence interval");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, 1.96 * (var / n as f64).sqrt())
}
