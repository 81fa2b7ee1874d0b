//! Dense two-phase simplex over an ordered field.
//!
//! Problems are small here (a few hundred variables at most: one-period
//! superreplication, martingale-measure feasibility, directional-derivative
//! programs), so the solver favors auditability over sparsity tricks:
//! explicit tableau, Bland's rule throughout (no cycling), duals recovered
//! from the final basis, and certificates for both failure modes.
//!
//! The kernel is generic over [`Scalar`]. With `f64` the tolerances are
//! floats; with `num_rational::BigRational` and zero tolerances every pivot
//! is exact, which [`solve_lp`] uses as a fallback whenever the float run
//! looks degenerate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use num_rational::BigRational;
use num_traits::ToPrimitive;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarBound {
    Free,
    NonNeg,
}

/// `minimize c.x subject to rows`, variable-by-variable bounds.
#[derive(Debug, Clone)]
pub struct LpProblem<F> {
    pub objective: Vec<F>,
    pub rows: Vec<LpRow<F>>,
    pub bounds: Vec<VarBound>,
}

#[derive(Debug, Clone)]
pub struct LpRow<F> {
    pub coeffs: Vec<F>,
    pub relation: Relation,
    pub rhs: F,
}

/// Solution with dual information. Sign convention for a minimization:
/// `duals[i] >= 0` on `Ge` rows, `<= 0` on `Le` rows, free on `Eq` rows, and
/// `value = duals . rhs`. `reduced_costs[j] = c_j - duals . column_j` is
/// nonnegative for `NonNeg` variables and zero for `Free` ones.
#[derive(Debug, Clone)]
pub struct LpSolution<F> {
    pub x: Vec<F>,
    pub value: F,
    pub duals: Vec<F>,
    pub reduced_costs: Vec<F>,
    /// Degenerate or tiny pivots were encountered; float results may be
    /// unreliable and [`solve_lp`] re-solves exactly when this is set.
    pub shaky: bool,
}

#[derive(Debug, Clone)]
pub enum LpOutcome<F> {
    Optimal(LpSolution<F>),
    /// `farkas` is a row multiplier vector proving infeasibility:
    /// respecting the row-sign convention it satisfies
    /// `farkas . A <= 0` on every admissible column and `farkas . rhs > 0`.
    Infeasible {
        farkas: Vec<F>,
    },
    /// `ray` is a feasible direction with negative objective slope.
    Unbounded {
        ray: Vec<F>,
    },
}

#[derive(Debug, Clone)]
pub struct SimplexOpts<F> {
    /// Numbers with magnitude below this are treated as zero.
    pub tol: F,
    /// Pivot magnitudes below this mark the run as shaky.
    pub degen_tol: F,
    pub max_iter: usize,
}

impl SimplexOpts<f64> {
    pub fn float_default(m: usize, n: usize) -> Self {
        SimplexOpts { tol: 1e-11, degen_tol: 1e-7, max_iter: 400 * (m + n + 8) }
    }
}

impl SimplexOpts<BigRational> {
    pub fn exact(m: usize, n: usize) -> Self {
        SimplexOpts {
            tol: num_traits::Zero::zero(),
            degen_tol: num_traits::Zero::zero(),
            max_iter: 2_000 * (m + n + 8),
        }
    }
}

struct Tableau<F> {
    /// `m x (ncols + 1)`; last column is the rhs.
    rows: Vec<Vec<F>>,
    /// Reduced-cost row, last entry is `-objective_value`.
    zrow: Vec<F>,
    basis: Vec<usize>,
    ncols: usize,
}

impl<F: Scalar> Tableau<F> {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c].clone();
        for v in self.rows[r].iter_mut() {
            *v = v.clone() / piv.clone();
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[c].clone();
            if factor != F::zero() {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= factor.clone() * p.clone();
                }
            }
        }
        let factor = self.zrow[c].clone();
        if factor != F::zero() {
            for (v, p) in self.zrow.iter_mut().zip(prow.iter()) {
                *v -= factor.clone() * p.clone();
            }
        }
        self.basis[r] = c;
    }
}

/// Internal bookkeeping connecting user variables/rows to standard form.
struct Mapping {
    /// For each standard structural column: (user var, +1/-1 sign).
    col_of: Vec<(usize, i8)>,
    /// Whether each user row was negated to make the rhs nonnegative.
    negated: Vec<bool>,
    art_col: Vec<usize>,
    n_total: usize,
}

fn build<F: Scalar>(p: &LpProblem<F>) -> Result<(Vec<Vec<F>>, Vec<F>, Vec<F>, Mapping)> {
    let n = p.objective.len();
    if p.bounds.len() != n {
        return Err(Error::InvalidArgument(format!(
            "LP has {n} objective coefficients but {} bounds",
            p.bounds.len()
        )));
    }
    for (i, r) in p.rows.iter().enumerate() {
        if r.coeffs.len() != n {
            return Err(Error::InvalidArgument(format!(
                "LP row {i} has {} coefficients, expected {n}",
                r.coeffs.len()
            )));
        }
    }
    let m = p.rows.len();
    let mut col_of = Vec::new();
    for (j, b) in p.bounds.iter().enumerate() {
        col_of.push((j, 1i8));
        if *b == VarBound::Free {
            col_of.push((j, -1i8));
        }
    }
    let n_structural = col_of.len();
    let mut slack_col = vec![None; m];
    let mut next = n_structural;
    for (i, r) in p.rows.iter().enumerate() {
        if r.relation != Relation::Eq {
            slack_col[i] = Some(next);
            next += 1;
        }
    }
    let art_col: Vec<usize> = (0..m).map(|i| next + i).collect();
    let ncols = next + m;

    let mut a = vec![vec![F::zero(); ncols]; m];
    let mut rhs = vec![F::zero(); m];
    let mut negated = vec![false; m];
    for (i, r) in p.rows.iter().enumerate() {
        for (c, &(j, s)) in col_of.iter().enumerate() {
            let v = r.coeffs[j].clone();
            a[i][c] = if s > 0 { v } else { -v };
        }
        if let Some(sc) = slack_col[i] {
            a[i][sc] = match r.relation {
                Relation::Le => F::one(),
                Relation::Ge => -F::one(),
                Relation::Eq => unreachable!(),
            };
        }
        rhs[i] = r.rhs.clone();
        if rhs[i] < F::zero() {
            negated[i] = true;
            rhs[i] = -rhs[i].clone();
            for v in a[i].iter_mut() {
                *v = -v.clone();
            }
        }
        a[i][art_col[i]] = F::one();
    }
    let mut cost = vec![F::zero(); ncols];
    for (c, &(j, s)) in col_of.iter().enumerate() {
        let v = p.objective[j].clone();
        cost[c] = if s > 0 { v } else { -v };
    }
    Ok((a, rhs, cost, Mapping { col_of, negated, art_col, n_total: ncols }))
}

struct RunState {
    iterations: usize,
    shaky: bool,
}

/// One simplex phase with Bland's rule. `allowed` masks the columns that may
/// enter. Returns `Some(col)` on unboundedness (the offending column).
fn run_phase<F: Scalar>(
    t: &mut Tableau<F>,
    allowed: &[bool],
    opts: &SimplexOpts<F>,
    state: &mut RunState,
) -> Result<Option<usize>> {
    loop {
        if state.iterations >= opts.max_iter {
            return Err(Error::Numeric(format!("simplex exceeded {} iterations", opts.max_iter)));
        }
        state.iterations += 1;
        // Bland: smallest eligible column with negative reduced cost.
        let mut enter = None;
        for c in 0..t.ncols {
            if allowed[c] && t.zrow[c] < -opts.tol.clone() {
                enter = Some(c);
                break;
            }
        }
        let Some(c) = enter else { return Ok(None) };
        // Ratio test; ties resolved by smallest basis variable (Bland).
        let mut leave: Option<(usize, F)> = None;
        for i in 0..t.rows.len() {
            let a = t.rows[i][c].clone();
            if a > opts.tol {
                let ratio = t.rows[i][t.ncols].clone() / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br || (ratio == br && t.basis[i] < t.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
        }
        let Some((r, ratio)) = leave else { return Ok(Some(c)) };
        if t.rows[r][c].clone().abs() < opts.degen_tol || ratio == F::zero() {
            state.shaky = true;
        }
        t.pivot(r, c);
    }
}

/// Solves `B^T y = c_B` for the dual vector by Gaussian elimination on the
/// stored standard-form basis columns.
fn basis_duals<F: Scalar>(a: &[Vec<F>], basis: &[usize], cb: &[F]) -> Result<Vec<F>> {
    let m = basis.len();
    // mat = B^T with augmented rhs.
    let mut mat: Vec<Vec<F>> = (0..m)
        .map(|k| {
            let mut row: Vec<F> = (0..m).map(|i| a[i][basis[k]].clone()).collect();
            row.push(cb[k].clone());
            row
        })
        .collect();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| {
                mat[i][col]
                    .clone()
                    .abs()
                    .partial_cmp(&mat[j][col].clone().abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if mat[piv][col] == F::zero() {
            return Err(Error::Numeric("singular basis while recovering duals".into()));
        }
        mat.swap(col, piv);
        let p = mat[col][col].clone();
        for v in mat[col].iter_mut() {
            *v = v.clone() / p.clone();
        }
        let prow = mat[col].clone();
        for (i, row) in mat.iter_mut().enumerate() {
            if i != col && row[col] != F::zero() {
                let f = row[col].clone();
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f.clone() * pv.clone();
                }
            }
        }
    }
    Ok(mat.into_iter().map(|row| row[m].clone()).collect())
}

/// Generic simplex; see [`solve_lp`] for the float entry point with exact
/// fallback.
pub fn simplex<F: Scalar>(p: &LpProblem<F>, opts: &SimplexOpts<F>) -> Result<LpOutcome<F>> {
    let (a, rhs, cost, map) = build(p)?;
    let m = rhs.len();
    let ncols = map.n_total;

    let mut t = Tableau {
        rows: (0..m)
            .map(|i| {
                let mut row = a[i].clone();
                row.push(rhs[i].clone());
                row
            })
            .collect(),
        zrow: vec![F::zero(); ncols + 1],
        basis: map.art_col.clone(),
        ncols,
    };

    // Phase 1: minimize the sum of artificials. Reduced costs for that
    // objective: z_j = -sum_i a_ij on non-artificial columns.
    for c in 0..ncols {
        if map.art_col.contains(&c) {
            continue;
        }
        let mut s = F::zero();
        for i in 0..m {
            s += t.rows[i][c].clone();
        }
        t.zrow[c] = -s;
    }
    let mut s = F::zero();
    for i in 0..m {
        s += t.rows[i][ncols].clone();
    }
    t.zrow[ncols] = -s;

    let mut allowed = vec![true; ncols];
    let mut state = RunState { iterations: 0, shaky: false };
    let unbounded = run_phase(&mut t, &allowed, opts, &mut state)?;
    debug_assert!(unbounded.is_none(), "phase 1 objective is bounded below by 0");
    let phase1 = -t.zrow[ncols].clone();
    if phase1 > opts.tol {
        // Farkas certificate from the phase-1 duals.
        let cb: Vec<F> = t
            .basis
            .iter()
            .map(|&c| if map.art_col.contains(&c) { F::one() } else { F::zero() })
            .collect();
        let y = basis_duals(&a, &t.basis, &cb)?;
        let farkas =
            (0..m).map(|i| if map.negated[i] { -y[i].clone() } else { y[i].clone() }).collect();
        return Ok(LpOutcome::Infeasible { farkas });
    }

    // Drive artificials out of the basis where possible.
    for i in 0..m {
        if map.art_col.contains(&t.basis[i]) {
            let mut target = None;
            for c in 0..ncols {
                if !map.art_col.contains(&c) && t.rows[i][c].clone().abs() > opts.degen_tol {
                    target = Some(c);
                    break;
                }
            }
            if let Some(c) = target {
                t.pivot(i, c);
            }
        }
    }

    // Phase 2: real objective. Artificial columns are banned from entering.
    for (c, al) in allowed.iter_mut().enumerate() {
        *al = !map.art_col.contains(&c);
    }
    for c in 0..ncols {
        t.zrow[c] = if c < cost.len() { cost[c].clone() } else { F::zero() };
    }
    t.zrow[ncols] = F::zero();
    // Eliminate reduced costs on basic columns.
    for i in 0..m {
        let b = t.basis[i];
        let f = t.zrow[b].clone();
        if f != F::zero() {
            let prow = t.rows[i].clone();
            for (v, pv) in t.zrow.iter_mut().zip(prow.iter()) {
                *v -= f.clone() * pv.clone();
            }
        }
    }

    if let Some(col) = run_phase(&mut t, &allowed, opts, &mut state)? {
        // Unbounded: build the improving ray in user coordinates.
        let mut ray_std = vec![F::zero(); ncols];
        ray_std[col] = F::one();
        for i in 0..m {
            let e = t.rows[i][col].clone();
            if t.basis[i] < ncols {
                ray_std[t.basis[i]] = -e;
            }
        }
        let mut ray = vec![F::zero(); p.objective.len()];
        for (c, &(j, s)) in map.col_of.iter().enumerate() {
            let v = ray_std[c].clone();
            ray[j] = ray[j].clone() + if s > 0 { v } else { -v };
        }
        return Ok(LpOutcome::Unbounded { ray });
    }

    // Optimal: extract the primal point, duals, reduced costs.
    let mut x_std = vec![F::zero(); ncols];
    for i in 0..m {
        if t.basis[i] < ncols {
            x_std[t.basis[i]] = t.rows[i][ncols].clone();
        }
    }
    let mut x = vec![F::zero(); p.objective.len()];
    for (c, &(j, s)) in map.col_of.iter().enumerate() {
        let v = x_std[c].clone();
        x[j] = x[j].clone() + if s > 0 { v } else { -v };
    }
    let value = x
        .iter()
        .zip(p.objective.iter())
        .fold(F::zero(), |acc, (xi, ci)| acc + xi.clone() * ci.clone());

    let cb: Vec<F> =
        t.basis.iter().map(|&c| if c < cost.len() { cost[c].clone() } else { F::zero() }).collect();
    let y_std = basis_duals(&a, &t.basis, &cb)?;
    let duals: Vec<F> =
        (0..m).map(|i| if map.negated[i] { -y_std[i].clone() } else { y_std[i].clone() }).collect();
    let reduced_costs: Vec<F> = (0..p.objective.len())
        .map(|j| {
            let mut r = p.objective[j].clone();
            for (i, row) in p.rows.iter().enumerate() {
                r -= duals[i].clone() * row.coeffs[j].clone();
            }
            r
        })
        .collect();

    Ok(LpOutcome::Optimal(LpSolution { x, value, duals, reduced_costs, shaky: state.shaky }))
}

fn to_exact(p: &LpProblem<f64>) -> Result<LpProblem<BigRational>> {
    let conv = |v: &f64| -> Result<BigRational> {
        BigRational::from_float(*v)
            .ok_or_else(|| Error::InvalidArgument(format!("non-finite LP coefficient {v}")))
    };
    Ok(LpProblem {
        objective: p.objective.iter().map(conv).collect::<Result<_>>()?,
        rows: p
            .rows
            .iter()
            .map(|r| {
                Ok(LpRow {
                    coeffs: r.coeffs.iter().map(conv).collect::<Result<_>>()?,
                    relation: r.relation,
                    rhs: conv(&r.rhs)?,
                })
            })
            .collect::<Result<_>>()?,
        bounds: p.bounds.clone(),
    })
}

fn from_exact(out: LpOutcome<BigRational>) -> LpOutcome<f64> {
    let f = |v: &BigRational| v.to_f64().unwrap_or(f64::NAN);
    match out {
        LpOutcome::Optimal(s) => LpOutcome::Optimal(LpSolution {
            x: s.x.iter().map(f).collect(),
            value: f(&s.value),
            duals: s.duals.iter().map(f).collect(),
            reduced_costs: s.reduced_costs.iter().map(f).collect(),
            shaky: false,
        }),
        LpOutcome::Infeasible { farkas } => {
            LpOutcome::Infeasible { farkas: farkas.iter().map(f).collect() }
        }
        LpOutcome::Unbounded { ray } => LpOutcome::Unbounded { ray: ray.iter().map(f).collect() },
    }
}

/// Float simplex with exact-rational fallback: if the float run reports
/// degenerate pivoting (or fails to converge), the problem is re-solved in
/// `BigRational` arithmetic and the exact answer is rounded back to `f64`.
pub fn solve_lp(p: &LpProblem<f64>) -> Result<LpOutcome<f64>> {
    let m = p.rows.len();
    let n = p.objective.len();
    let float = simplex(p, &SimplexOpts::float_default(m, n));
    let needs_exact = match &float {
        Ok(LpOutcome::Optimal(s)) => s.shaky,
        Ok(_) => false,
        Err(_) => true,
    };
    if !needs_exact {
        return float;
    }
    let exact = simplex(&to_exact(p)?, &SimplexOpts::exact(m, n))?;
    Ok(from_exact(exact))
}
