//! Axis functional equations for the first-order jets of a flattening map.
//!
//! Along the `x1`-axis of a map with both axes invariant, `DF(s, 0)` is upper
//! triangular with entries `a11, a12, a22` and `f(s) = π1 F(s, 0)`. The diagonal
//! of `P(s) = DΨ(s, 0)` solves
//!
//! ```text
//! a11(s) p11(f(s)) = λ1 p11(s)
//! a22(s) p12(f(s)) = λ1 p12(s) - a12(s) p11(f(s))
//! a22(s) p22(f(s)) = λ2 p22(s)
//! ```
//!
//! Each equation is an affine fixed point `φ(s) = c(s) φ(z(s)) + g(s)` with `z = f`
//! or `z = f⁻¹`, whichever makes the operator contract in the Hölder norm.
//! The `x2`-axis is handled by solving the same system for the swapped map.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjugacy::fit_geometric_ratio;
use crate::grid::{AxisFunction, AxisGrid, GridError};
use crate::linalg::{diag, op_norm, pt, Mat2};
use crate::maps::{smooth_step, smooth_step_prime, MapError, MapRef, PlanarMap, SwappedMap};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum FuncEqError {
    #[error("operator is not contracting: measured factor {factor:.4} at radius {radius:e} after {halvings} halvings")]
    NotContracting { factor: f64, radius: f64, halvings: usize },
    #[error("no convergence after {iterations} iterations (last sup difference {last:e})")]
    NoConvergence { iterations: usize, last: f64 },
    #[error("a12 does not vanish outside the grid: |a12({at})| = {value:e}")]
    SupportLeak { at: f64, value: f64 },
    #[error("axis is not invariant: |d(pi2 F)/dx1| = {0:e} on the axis")]
    NotStraightened(f64),
    #[error("invalid coefficients: {0}")]
    Coefficients(String),
    #[error("jet normalization violated: {0}")]
    Normalization(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
}

/// Coefficients of the axis system: the axis dynamics `f` and the entries of `DF` on the axis.
#[derive(Clone)]
pub struct AxisCoefficients {
    /// Eigenvalue along the axis (`λ1` for the `x1`-axis).
    pub lambda_axis: f64,
    /// Transverse eigenvalue.
    pub lambda_transverse: f64,
    /// Hölder exponent of the coefficients, used for the operator norms.
    pub alpha: f64,
    /// Radius of `J`: outside `[-support, support]` the map is linear on the axis.
    pub support: f64,
    f: ScalarFn,
    a11: ScalarFn,
    a12: ScalarFn,
    a22: ScalarFn,
}

impl std::fmt::Debug for AxisCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AxisCoefficients")
            .field("lambda_axis", &self.lambda_axis)
            .field("lambda_transverse", &self.lambda_transverse)
            .field("alpha", &self.alpha)
            .field("support", &self.support)
            .finish_non_exhaustive()
    }
}

impl AxisCoefficients {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lambda_axis: f64,
        lambda_transverse: f64,
        alpha: f64,
        support: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        a11: impl Fn(f64) -> f64 + Send + Sync + 'static,
        a12: impl Fn(f64) -> f64 + Send + Sync + 'static,
        a22: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, FuncEqError> {
        let c = Self {
            lambda_axis,
            lambda_transverse,
            alpha,
            support,
            f: Arc::new(f),
            a11: Arc::new(a11),
            a12: Arc::new(a12),
            a22: Arc::new(a22),
        };
        c.validate()?;
        Ok(c)
    }

    /// Coefficients of the linear map: `f(s) = λa s`, `a11 = λa`, `a12 = 0`, `a22 = λt`.
    pub fn linear(lambda_axis: f64, lambda_transverse: f64, alpha: f64, support: f64) -> Result<Self, FuncEqError> {
        Self::new(
            lambda_axis,
            lambda_transverse,
            alpha,
            support,
            move |s| lambda_axis * s,
            move |_| lambda_axis,
            |_| 0.0,
            move |_| lambda_transverse,
        )
    }

    /// A `C^{0,α}` perturbation of the linear coefficients supported in `|s| < outer`.
    ///
    /// `f(s) = λa s + c sgn(s)|s|^{1+α} ρ(s)`, `a11 = f'`, `a12 = c|s|^α ρ`,
    /// `a22 = λt (1 + c|s|^α ρ)` with `ρ` a smooth cutoff equal to 1 on `|s| ≤ inner`.
    pub fn model(
        lambda_axis: f64,
        lambda_transverse: f64,
        alpha: f64,
        amplitude: f64,
        inner: f64,
        outer: f64,
    ) -> Result<Self, FuncEqError> {
        if !(inner > 0.0 && outer > inner) {
            return Err(FuncEqError::Coefficients(format!("cutoff radii {inner}, {outer}")));
        }
        let w = outer - inner;
        let rho = move |s: f64| smooth_step((outer - s.abs()) / w);
        let rho_r = move |s: f64| -smooth_step_prime((outer - s.abs()) / w) / w;
        let c = amplitude;
        Self::new(
            lambda_axis,
            lambda_transverse,
            alpha,
            outer,
            move |s| lambda_axis * s + c * s.signum() * s.abs().powf(1.0 + alpha) * rho(s),
            move |s| {
                let r = s.abs();
                lambda_axis + c * ((1.0 + alpha) * r.powf(alpha) * rho(s) + r.powf(1.0 + alpha) * rho_r(s))
            },
            move |s| c * s.abs().powf(alpha) * rho(s),
            move |s| lambda_transverse * (1.0 + c * s.abs().powf(alpha) * rho(s)),
        )
    }

    /// Reads the coefficients off `DF` along `axis`; the `x2`-axis uses the swapped map.
    pub fn from_map(map: MapRef, axis: Axis, alpha: f64, support: f64) -> Result<Self, FuncEqError> {
        let map: MapRef = match axis {
            Axis::X1 => map,
            Axis::X2 => Arc::new(SwappedMap::new(map)),
        };
        let (la, lt) = map.linear_part();
        let mut a21: f64 = 0.0;
        for k in 0..=200 {
            let s = support * (k as f64 / 100.0 - 1.0);
            a21 = a21.max(map.jacobian(pt(s, 0.0))?[(1, 0)].abs());
        }
        if a21 > 1e-10 {
            return Err(FuncEqError::NotStraightened(a21));
        }
        let (m0, m1, m2, m3) = (map.clone(), map.clone(), map.clone(), map);
        let entry = |m: MapRef, i: usize, j: usize| move |s: f64| m.jacobian(pt(s, 0.0)).map(|d| d[(i, j)]).unwrap_or(f64::NAN);
        Self::new(
            la,
            lt,
            alpha,
            support,
            move |s| m0.eval(pt(s, 0.0)).map(|y| y[0]).unwrap_or(f64::NAN),
            entry(m1, 0, 0),
            entry(m2, 0, 1),
            entry(m3, 1, 1),
        )
    }

    fn validate(&self) -> Result<(), FuncEqError> {
        let (la, lt) = (self.lambda_axis, self.lambda_transverse);
        if !(la.is_finite() && lt.is_finite()) || la.abs() == 1.0 || la == 0.0 || lt == 0.0 {
            return Err(FuncEqError::Coefficients(format!("eigenvalues ({la}, {lt})")));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FuncEqError::Coefficients(format!("alpha = {}", self.alpha)));
        }
        if !(self.support > 0.0 && self.support.is_finite()) {
            return Err(FuncEqError::Coefficients(format!("support = {}", self.support)));
        }
        if self.f(0.0).abs() > 1e-14 {
            return Err(FuncEqError::Coefficients(format!("f(0) = {}", self.f(0.0))));
        }
        if (self.a11(0.0) - la).abs() > 1e-10 * la.abs() {
            return Err(FuncEqError::Coefficients(format!("Df(0) = {} differs from {la}", self.a11(0.0))));
        }
        for k in 0..=400 {
            let s = self.support * (k as f64 / 200.0 - 1.0);
            let (d, a22) = (self.a11(s), self.a22(s));
            if !(d.is_finite() && a22.is_finite() && self.a12(s).is_finite()) {
                return Err(FuncEqError::Coefficients(format!("non-finite coefficient at {s}")));
            }
            if d * la <= 0.0 {
                return Err(FuncEqError::Coefficients(format!("f is not monotone: Df({s}) = {d}")));
            }
            if a22 * lt <= 0.0 {
                return Err(FuncEqError::Coefficients(format!("a22({s}) = {a22} changes sign")));
            }
        }
        Ok(())
    }

    pub fn f(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn a11(&self, s: f64) -> f64 {
        (self.a11)(s)
    }

    pub fn a12(&self, s: f64) -> f64 {
        (self.a12)(s)
    }

    pub fn a22(&self, s: f64) -> f64 {
        (self.a22)(s)
    }

    /// `f⁻¹(y)` by bisection on a bracket around `y / λa`, run until the bracket stops
    /// shrinking (well below `1e-14` absolute).
    pub fn f_inv(&self, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        let guess = y / self.lambda_axis;
        if guess.abs() > 2.0 * self.support {
            return guess;
        }
        let inc = self.lambda_axis > 0.0;
        let mut w = 0.25 * self.support.max(guess.abs()) + 1e-300;
        let (mut lo, mut hi) = (guess - w, guess + w);
        let below = |s: f64| (self.f(s) < y) == inc;
        for _ in 0..60 {
            if below(lo) && !below(hi) {
                break;
            }
            w *= 2.0;
            lo = guess - w;
            hi = guess + w;
        }
        for _ in 0..1100 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if below(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Eigenvalue on the axis has modulus below one.
    pub fn axis_contracts(&self) -> bool {
        self.lambda_axis.abs() < 1.0
    }

    fn check_support(&self, radius: f64) -> Result<(), FuncEqError> {
        for k in 1..=200 {
            let s = radius * (1.0 + 3.0 * k as f64 / 200.0);
            for z in [s, -s] {
                let v = self.a12(z);
                if v != 0.0 {
                    return Err(FuncEqError::SupportLeak { at: z, value: v.abs() });
                }
            }
        }
        Ok(())
    }
}

/// Direction of the affine sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sweep {
    /// `φ(s) = c φ(f(s)) + g`
    Forward,
    /// `φ(y) = c φ(f⁻¹(y)) + g`
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagonal {
    P11,
    P22,
}

/// Run record of one fixed-point iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub sweep: Sweep,
    pub iterations: usize,
    /// Sup norm of successive differences.
    pub sup_history: Vec<f64>,
    /// Hölder seminorm (exponent `alpha`) of successive differences.
    pub seminorm_history: Vec<f64>,
    pub measured_factor: f64,
    pub theoretical_factor: f64,
    pub radius: f64,
    pub halvings: usize,
    /// Sup residual of the original equation at the sweep's sample points.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisSolution {
    pub p: AxisFunction,
    pub report: ContractionReport,
}

/// Measured against theoretical contraction factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionDiagnostics {
    pub measured: f64,
    pub theoretical: f64,
    pub within_slack: bool,
}

/// Number of leading iterations whose orbit scales stay resolved by `grid`.
///
/// Each sweep moves the singular profile of the iterates by the factor
/// `min(|λa|, 1/|λa|)` in scale; once that scale falls below the node spacing the
/// discrete operator contracts at the Lipschitz rate instead of the Hölder rate.
pub fn resolved_iterations(grid: &AxisGrid, lambda_axis: f64) -> usize {
    let l = lambda_axis.abs().min(1.0 / lambda_axis.abs());
    ((grid.radius() / grid.step()).ln() / (1.0 / l).ln()).floor().max(0.0) as usize
}

/// Fitted geometric ratio of a residual history over the resolved window.
///
/// Entry 0 is skipped, the window is cut at `resolved` and at the rounding floor, and the
/// ratio is fitted over the second half of what remains. Fewer than three usable entries
/// give a measured factor of 0.
pub fn contraction_diagnostics(history: &[f64], theoretical: f64, resolved: usize) -> ContractionDiagnostics {
    let peak = history.iter().cloned().fold(0.0, f64::max);
    let usable: Vec<f64> =
        history.iter().take(resolved + 1).skip(1).cloned().take_while(|&h| h > peak * 1e-9).collect();
    let measured = if usable.len() < 3 { 0.0 } else { fit_geometric_ratio(&usable[(usable.len() - 1) / 2..]) };
    ContractionDiagnostics { measured, theoretical, within_slack: measured <= theoretical + 0.1 }
}

struct AffineSweep {
    z: Vec<f64>,
    c: Vec<f64>,
    g: Vec<f64>,
}

/// Pair weights `|s - t|^-alpha` over a thinned node set, for repeated seminorms on one grid.
struct SeminormKernel {
    idx: Vec<usize>,
    weights: Vec<f64>,
}

impl SeminormKernel {
    fn new(grid: &AxisGrid, alpha: f64, max_nodes: usize) -> Self {
        let stride = grid.n.div_ceil(max_nodes).max(1);
        let first = grid.zero_index().unwrap_or(0) % stride;
        let idx: Vec<usize> = (first..grid.n).step_by(stride).collect();
        let mut weights = Vec::with_capacity(idx.len() * idx.len() / 2);
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                weights.push((grid.node(j) - grid.node(i)).abs().powf(-alpha));
            }
        }
        Self { idx, weights }
    }

    fn seminorm(&self, values: &[f64]) -> f64 {
        let mut best: f64 = 0.0;
        let mut w = self.weights.iter();
        for (a, &i) in self.idx.iter().enumerate() {
            for &j in &self.idx[a + 1..] {
                best = best.max((values[i] - values[j]).abs() * w.next().unwrap());
            }
        }
        best
    }
}

fn iterate_sweep(
    grid: AxisGrid,
    sweep: &AffineSweep,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> (AxisFunction, Vec<f64>, Vec<f64>, bool) {
    let kernel = SeminormKernel::new(&grid, alpha, 513);
    let mut phi = AxisFunction::constant(grid, 0.0);
    let mut sup = Vec::new();
    let mut semi = Vec::new();
    for _ in 0..max_iter {
        let next: Vec<f64> =
            (0..grid.n).into_par_iter().map(|i| sweep.c[i] * phi.eval(sweep.z[i]) + sweep.g[i]).collect();
        let diff: Vec<f64> = next.iter().zip(&phi.values).map(|(a, b)| a - b).collect();
        let d = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        sup.push(d);
        semi.push(kernel.seminorm(&diff));
        phi.values = next;
        if d <= tol {
            return (phi, sup, semi, true);
        }
        if !d.is_finite() {
            break;
        }
    }
    (phi, sup, semi, false)
}

fn halving_loop(
    mut grid: AxisGrid,
    lambda_axis: f64,
    max_halvings: usize,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    theoretical: f64,
    sweep_for: impl Fn(AxisGrid) -> Result<(Sweep, AffineSweep), FuncEqError>,
) -> Result<(AxisFunction, ContractionReport), FuncEqError> {
    let mut halvings = 0;
    loop {
        let (kind, sweep) = sweep_for(grid)?;
        let (phi, sup, semi, converged) = iterate_sweep(grid, &sweep, alpha, tol, max_iter);
        let diag = contraction_diagnostics(&semi, theoretical, resolved_iterations(&grid, lambda_axis));
        if converged && diag.measured < 1.0 {
            let report = ContractionReport {
                sweep: kind,
                iterations: sup.len(),
                sup_history: sup,
                seminorm_history: semi,
                measured_factor: diag.measured,
                theoretical_factor: theoretical,
                radius: grid.radius(),
                halvings,
                residual: 0.0,
            };
            return Ok((phi, report));
        }
        if halvings == max_halvings {
            if diag.measured >= 1.0 || !diag.measured.is_finite() {
                return Err(FuncEqError::NotContracting { factor: diag.measured, radius: grid.radius(), halvings });
            }
            return Err(FuncEqError::NoConvergence { iterations: sup.len(), last: sup.last().copied().unwrap_or(f64::NAN) });
        }
        halvings += 1;
        grid = AxisGrid::symmetric(0.5 * grid.radius(), grid.n)?;
    }
}

/// Maximum number of automatic interval halvings.
pub const MAX_HALVINGS: usize = 6;

/// Theoretical Hölder-norm factor of the diagonal operator.
pub fn diag_factor(coeffs: &AxisCoefficients) -> f64 {
    let la = coeffs.lambda_axis.abs();
    if coeffs.axis_contracts() {
        la.powf(coeffs.alpha)
    } else {
        la.powf(-coeffs.alpha)
    }
}

/// Theoretical Hölder-norm factor of the off-diagonal operator for the chosen sweep.
pub fn offdiag_factor(coeffs: &AxisCoefficients) -> (Sweep, f64) {
    let la = coeffs.lambda_axis.abs();
    let lt = coeffs.lambda_transverse.abs();
    let a = coeffs.alpha;
    if la < lt {
        (Sweep::Backward, la.powf(1.0 - a) / lt)
    } else {
        (Sweep::Forward, lt * la.powf(a - 1.0))
    }
}

/// Solves the `p11` (with `a11`, `λa`) or `p22` (with `a22`, `λt`) equation.
pub fn solve_fe_diag(
    coeffs: &AxisCoefficients,
    which: Diagonal,
    grid: &AxisGrid,
    tol: f64,
    max_iter: usize,
) -> Result<AxisSolution, FuncEqError> {
    let (a, mu): (&ScalarFn, f64) = match which {
        Diagonal::P11 => (&coeffs.a11, coeffs.lambda_axis),
        Diagonal::P22 => (&coeffs.a22, coeffs.lambda_transverse),
    };
    let forward = coeffs.axis_contracts();
    let sweep_for = |grid: AxisGrid| {
        let nodes = grid.nodes();
        let (z, c): (Vec<f64>, Vec<f64>) = nodes
            .par_iter()
            .map(|&s| {
                if forward {
                    (coeffs.f(s), a(s) / mu)
                } else {
                    let z = coeffs.f_inv(s);
                    (z, mu / a(z))
                }
            })
            .unzip();
        let g = c.iter().map(|c| c - 1.0).collect();
        let kind = if forward { Sweep::Forward } else { Sweep::Backward };
        Ok((kind, AffineSweep { z, c, g }))
    };
    let (tilde, mut report) =
        halving_loop(*grid, coeffs.lambda_axis, MAX_HALVINGS, coeffs.alpha, tol, max_iter, diag_factor(coeffs), sweep_for)?;
    let p = AxisFunction::new(tilde.grid, tilde.values.iter().map(|v| 1.0 + v).collect()).with_outside(1.0);
    report.residual = equation_residual(coeffs, &p, report.sweep, |s, ps, pfs| a(s) * pfs - mu * ps);
    Ok(AxisSolution { p, report })
}

/// Extension of `p` beyond its grid by a smooth cutoff towards `base` over one grid radius.
pub fn extend_compact(p: &AxisFunction, base: f64) -> impl Fn(f64) -> f64 + '_ {
    move |s: f64| {
        if p.grid.contains(s) {
            return p.eval(s);
        }
        let r = p.grid.radius();
        let edge = p.eval(s.clamp(p.grid.min, p.grid.max));
        base + (edge - base) * (1.0 - smooth_step((s.abs() - r) / r))
    }
}

/// Solves the `p12` equation given `p11`.
pub fn solve_fe_offdiag(
    coeffs: &AxisCoefficients,
    p11: &AxisFunction,
    grid: &AxisGrid,
    tol: f64,
    max_iter: usize,
) -> Result<AxisSolution, FuncEqError> {
    let mu = coeffs.lambda_axis;
    let (kind, theoretical) = offdiag_factor(coeffs);
    let p11e = extend_compact(p11, 1.0);
    let sweep_for = |grid: AxisGrid| {
        coeffs.check_support(grid.radius())?;
        let nodes = grid.nodes();
        let rows: Vec<(f64, f64, f64)> = nodes
            .par_iter()
            .map(|&s| match kind {
                Sweep::Backward => {
                    let z = coeffs.f_inv(s);
                    let a22 = coeffs.a22(z);
                    (z, mu / a22, -coeffs.a12(z) * p11e(s) / a22)
                }
                Sweep::Forward => {
                    let z = coeffs.f(s);
                    (z, coeffs.a22(s) / mu, coeffs.a12(s) * p11e(z) / mu)
                }
            })
            .collect();
        let z = rows.iter().map(|r| r.0).collect();
        let c = rows.iter().map(|r| r.1).collect();
        let g = rows.iter().map(|r| r.2).collect();
        Ok((kind, AffineSweep { z, c, g }))
    };
    let (p, mut report) = halving_loop(*grid, coeffs.lambda_axis, MAX_HALVINGS, coeffs.alpha, tol, max_iter, theoretical, sweep_for)?;
    report.residual =
        equation_residual(coeffs, &p, report.sweep, |s, ps, pfs| coeffs.a22(s) * pfs - mu * ps + coeffs.a12(s) * p11e(coeffs.f(s)));
    Ok(AxisSolution { p, report })
}

/// Sup of `eq(s, p(s), p(f(s)))` over the points where the sweep imposes the equation:
/// the nodes for a forward sweep, their preimages `f⁻¹(node)` for a backward sweep.
fn equation_residual(
    coeffs: &AxisCoefficients,
    p: &AxisFunction,
    sweep: Sweep,
    eq: impl Fn(f64, f64, f64) -> f64 + Sync,
) -> f64 {
    p.grid
        .nodes()
        .par_iter()
        .map(|&node| {
            let s = match sweep {
                Sweep::Forward => node,
                Sweep::Backward => coeffs.f_inv(node),
            };
            let fs = match sweep {
                Sweep::Forward => coeffs.f(s),
                Sweep::Backward => node,
            };
            eq(s, p.eval(s), p.eval(fs)).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// The three solutions of one axis system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisSystem {
    pub p11: AxisSolution,
    pub p12: AxisSolution,
    pub p22: AxisSolution,
}

impl AxisSystem {
    pub fn residuals(&self) -> [f64; 3] {
        [self.p11.report.residual, self.p12.report.residual, self.p22.report.residual]
    }
}

/// Solves the diagonal equations and then the off-diagonal one.
pub fn solve_system(coeffs: &AxisCoefficients, grid: &AxisGrid, tol: f64, max_iter: usize) -> Result<AxisSystem, FuncEqError> {
    let p11 = solve_fe_diag(coeffs, Diagonal::P11, grid, tol, max_iter)?;
    let p22 = solve_fe_diag(coeffs, Diagonal::P22, grid, tol, max_iter)?;
    let p12 = solve_fe_offdiag(coeffs, &p11.p, grid, tol, max_iter)?;
    Ok(AxisSystem { p11, p12, p22 })
}

/// Reads the coefficients of `map` along `axis` and solves the axis system.
///
/// For `Axis::X2` the result is expressed for the swapped map: its `p11, p12, p22`
/// are the jets `q22, q21, q11` of the original map.
pub fn solve_axis_system(
    map: MapRef,
    axis: Axis,
    grid: &AxisGrid,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(AxisCoefficients, AxisSystem), FuncEqError> {
    let support = map.support_radius().filter(|r| *r > 0.0).unwrap_or(grid.radius()).min(grid.radius());
    let coeffs = AxisCoefficients::from_map(map, axis, alpha, support)?;
    let system = solve_system(&coeffs, grid, tol, max_iter)?;
    Ok((coeffs, system))
}

/// Axis jets of the flattening map: `DΨ(s, 0) = [[p11, p12], [0, p22]]` and
/// `DΨ(0, s) = [[q11, 0], [q21, q22]]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisJets {
    pub alpha: f64,
    pub p11: AxisFunction,
    pub p12: AxisFunction,
    pub p22: AxisFunction,
    pub q11: AxisFunction,
    pub q21: AxisFunction,
    pub q22: AxisFunction,
}

impl AxisJets {
    /// Jets of the identity on both axes.
    pub fn identity(grid1: AxisGrid, grid2: AxisGrid, alpha: f64) -> Self {
        let one = |g| AxisFunction::constant(g, 1.0).with_outside(1.0);
        let zero = |g| AxisFunction::constant(g, 0.0);
        Self { alpha, p11: one(grid1), p12: zero(grid1), p22: one(grid1), q11: one(grid2), q21: zero(grid2), q22: one(grid2) }
    }

    pub fn from_systems(x1: &AxisSystem, x2: &AxisSystem, alpha: f64) -> Self {
        Self {
            alpha,
            p11: x1.p11.p.clone(),
            p12: x1.p12.p.clone(),
            p22: x1.p22.p.clone(),
            q11: x2.p22.p.clone(),
            q21: x2.p12.p.clone(),
            q22: x2.p11.p.clone(),
        }
    }

    /// The normalizations `p11(0) = p22(0) = q11(0) = q22(0) = 1`, `p12(0) = q21(0) = 0`.
    pub fn check_normalization(&self, tol: f64) -> Result<(), FuncEqError> {
        let checks = [
            ("p11", &self.p11, 1.0),
            ("p12", &self.p12, 0.0),
            ("p22", &self.p22, 1.0),
            ("q11", &self.q11, 1.0),
            ("q21", &self.q21, 0.0),
            ("q22", &self.q22, 1.0),
        ];
        for (name, f, want) in checks {
            let v = f.eval(0.0);
            if (v - want).abs() > tol {
                return Err(FuncEqError::Normalization(format!("{name}(0) = {v}, expected {want}")));
            }
        }
        Ok(())
    }

    /// Hölder seminorms of the six jets, in field order.
    pub fn seminorms(&self) -> [f64; 6] {
        let a = self.alpha;
        [
            self.p11.holder_seminorm(a),
            self.p12.holder_seminorm(a),
            self.p22.holder_seminorm(a),
            self.q11.holder_seminorm(a),
            self.q21.holder_seminorm(a),
            self.q22.holder_seminorm(a),
        ]
    }
}

/// Jets of both axes plus the per-axis run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JetSolution {
    pub jets: AxisJets,
    pub x1: AxisSystem,
    pub x2: AxisSystem,
}

/// Solves both axis systems of a map with invariant axes.
pub fn solve_jets(
    map: MapRef,
    grid1: &AxisGrid,
    grid2: &AxisGrid,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<JetSolution, FuncEqError> {
    let (_, x1) = solve_axis_system(map.clone(), Axis::X1, grid1, alpha, tol, max_iter)?;
    let (_, x2) = solve_axis_system(map, Axis::X2, grid2, alpha, tol, max_iter)?;
    let jets = AxisJets::from_systems(&x1, &x2, alpha);
    jets.check_normalization(1e-9)?;
    Ok(JetSolution { jets, x1, x2 })
}

/// Sup over samples of `||P(F(x)) DF(x) - Λ P(x)||` on both axes, with `DF` from the map.
///
/// Samples whose image leaves the jet grid are skipped.
pub fn jet_matrix_residual(map: &dyn PlanarMap, jets: &AxisJets, samples: &[f64]) -> Result<f64, FuncEqError> {
    let (l1, l2) = map.linear_part();
    let mut worst: f64 = 0.0;
    for &s in samples {
        let x = pt(s, 0.0);
        let (y, d) = map.eval_with_jacobian(x)?;
        let p = |t: f64| Mat2::new(jets.p11.eval(t), jets.p12.eval(t), 0.0, jets.p22.eval(t));
        if jets.p11.grid.contains(y[0]) && jets.p11.grid.contains(s) {
            let r = p(y[0]) * d - diag(l1, l2) * p(s);
            worst = worst.max(op_norm(&r));
        }
        let x = pt(0.0, s);
        let (y, d) = map.eval_with_jacobian(x)?;
        let q = |t: f64| Mat2::new(jets.q11.eval(t), 0.0, jets.q21.eval(t), jets.q22.eval(t));
        if jets.q11.grid.contains(y[1]) && jets.q11.grid.contains(s) {
            let r = q(y[1]) * d - diag(l1, l2) * q(s);
            worst = worst.max(op_norm(&r));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(r: f64, n: usize) -> AxisGrid {
        AxisGrid::symmetric(r, n).unwrap()
    }

    #[test]
    fn linear_coefficients_are_trivial() {
        let c = AxisCoefficients::linear(0.5, 2.0, 0.5, 0.2).unwrap();
        let s = solve_system(&c, &grid(0.2, 401), 1e-12, 100).unwrap();
        assert!(s.p11.p.values.iter().all(|&v| v == 1.0));
        assert!(s.p22.p.values.iter().all(|&v| v == 1.0));
        assert!(s.p12.p.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.p11.report.iterations, 1);
        assert_eq!(s.p11.report.sup_history, vec![0.0]);
    }

    #[test]
    fn inverse_of_axis_map() {
        let c = AxisCoefficients::model(0.5, 2.0, 0.5, 0.3, 0.1, 0.2).unwrap();
        for y in [-0.3, -0.05, 0.0, 1e-7, 0.04, 0.11] {
            assert!((c.f(c.f_inv(y)) - y).abs() < 1e-13);
        }
    }

    #[test]
    fn series_oracle_for_p11() {
        let l = 0.5;
        let c = AxisCoefficients::new(0.5, 2.0, 1.0, 0.1, move |s| l * (s + 0.05 * s * s), move |s| l * (1.0 + 0.1 * s), |_| 0.0, |_| 2.0)
            .unwrap();
        let g = grid(0.1, 8001);
        let sol = solve_fe_diag(&c, Diagonal::P11, &g, 1e-14, 500).unwrap();
        let oracle = |s0: f64| {
            let mut s = s0;
            let mut prod = 1.0;
            for _ in 0..64 {
                prod *= c.a11(s) / l;
                s = c.f(s);
            }
            prod
        };
        let err = g.nodes().iter().zip(&sol.p.values).fold(0.0f64, |m, (&s, &v)| m.max((v - oracle(s)).abs()));
        assert!(err < 1e-10, "{err}");
        assert!(sol.report.residual < 1e-12);
    }

    #[test]
    fn offdiag_vanishes_at_origin() {
        let c = AxisCoefficients::model(0.5, 2.0, 0.5, 0.3, 0.1, 0.2).unwrap();
        let s = solve_system(&c, &grid(0.2, 4001), 1e-13, 2000).unwrap();
        assert!(s.p12.p.eval(0.0).abs() < 1e-12);
        assert!(s.residuals().iter().all(|&r| r < 1e-10), "{:?}", s.residuals());
        assert!(s.p11.p.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn offdiag_matches_series_for_smooth_bump() {
        let rho = |s: f64| smooth_step((0.2 - s.abs()) / 0.1);
        let c = AxisCoefficients::new(
            0.5,
            2.0,
            1.0,
            0.2,
            |s| 0.5 * s,
            |_| 0.5,
            move |s| 0.3 * s * rho(s),
            move |s| 2.0 * (1.0 + 0.1 * s * s * rho(s)),
        )
        .unwrap();
        let g = grid(0.2, 8001);
        let s = solve_system(&c, &g, 1e-14, 2000).unwrap();
        assert!(s.residuals().iter().all(|&r| r < 1e-10), "{:?}", s.residuals());
        let oracle = |y0: f64| {
            let mut y = y0;
            let mut weight = 1.0;
            let mut sum = 0.0;
            while y.abs() <= 0.2 {
                let z = c.f_inv(y);
                let a22 = c.a22(z);
                sum += weight * (-c.a12(z) / a22);
                weight *= c.lambda_axis / a22;
                y = z;
                if y == 0.0 {
                    break;
                }
            }
            sum
        };
        let err = g.nodes().iter().zip(&s.p12.p.values).fold(0.0f64, |m, (&y, &v)| m.max((v - oracle(y)).abs()));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn measured_ratios_match_theory() {
        let c = AxisCoefficients::model(0.5, 2.0, 0.5, 0.3, 0.1, 0.2).unwrap();
        let s = solve_system(&c, &grid(0.2, 4001), 1e-13, 2000).unwrap();
        let t1 = s.p11.report.measured_factor;
        let t2 = s.p12.report.measured_factor;
        assert!((t1 - 0.5f64.sqrt()).abs() < 0.1, "{t1}");
        assert!((t2 - 0.5f64.sqrt() / 2.0).abs() < 0.1, "{t2}");
        let c1 = AxisCoefficients::model(0.5, 2.0, 1.0, 0.3, 0.1, 0.2).unwrap();
        let s1 = solve_fe_diag(&c1, Diagonal::P11, &grid(0.2, 4001), 1e-13, 2000).unwrap();
        assert!(s1.report.measured_factor <= 0.6, "{}", s1.report.measured_factor);
    }

    #[test]
    fn expanding_axis_uses_backward_diagonal() {
        let c = AxisCoefficients::model(2.0, 0.5, 0.5, 0.3, 0.1, 0.2).unwrap();
        let s = solve_system(&c, &grid(0.5, 4001), 1e-13, 2000).unwrap();
        assert_eq!(s.p11.report.sweep, Sweep::Backward);
        assert_eq!(s.p12.report.sweep, Sweep::Forward);
        assert!(s.residuals().iter().all(|&r| r < 1e-10), "{:?}", s.residuals());
        assert!(s.p11.p.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn leaking_a12_is_rejected() {
        let c = AxisCoefficients::new(0.5, 2.0, 0.5, 0.1, |s| 0.5 * s, |_| 0.5, |s| 0.1 * s, |_| 2.0).unwrap();
        let p11 = AxisFunction::constant(grid(0.1, 101), 1.0);
        assert!(matches!(solve_fe_offdiag(&c, &p11, &grid(0.1, 101), 1e-12, 100), Err(FuncEqError::SupportLeak { .. })));
    }

    fn sheared_gstar() -> MapRef {
        use crate::maps::{make_siegel_counterexample, AxisShear, BumpProfile, ConjugatedMap};
        use crate::spectral::SpectralParams;
        let g = make_siegel_counterexample(SpectralParams::new(0.5, 2.0, 1.0), BumpProfile::default()).unwrap();
        let t = AxisShear::new(1.0, 0.8, 0.1, 0.2).unwrap();
        Arc::new(ConjugatedMap::new(Arc::new(g), Arc::new(t)))
    }

    #[test]
    fn linear_map_has_identity_jets() {
        let map: MapRef = Arc::new(crate::maps::LinearMap::new(0.5, 2.0));
        let g = grid(0.2, 401);
        let sol = solve_jets(map, &g, &g, 1.0, 1e-12, 100).unwrap();
        let j = &sol.jets;
        for f in [&j.p11, &j.p22, &j.q11, &j.q22] {
            assert!(f.values.iter().all(|&v| v == 1.0));
        }
        assert!(j.p12.values.iter().chain(&j.q21.values).all(|&v| v == 0.0));
    }

    #[test]
    fn sheared_siegel_map_satisfies_matrix_identity() {
        let map = sheared_gstar();
        let (g1, g2) = (grid(0.4, 4001), grid(0.4, 4001));
        let sol = solve_jets(map.clone(), &g1, &g2, 1.0, 1e-13, 2000).unwrap();
        let samples: Vec<f64> = (0..=400).map(|k| g1.node(10 * k)).collect();
        let r = jet_matrix_residual(map.as_ref(), &sol.jets, &samples).unwrap();
        assert!(r < 1e-10, "{r}");
        assert!(sol.jets.p12.sup_abs() > 1e-3 && sol.jets.q21.sup_abs() > 1e-3);
        assert!(sol.jets.seminorms().iter().all(|v| v.is_finite()));
        assert!(sol.x1.residuals().iter().chain(sol.x2.residuals().iter()).all(|&r| r < 1e-10));
    }

    #[test]
    fn mirror_axis_matches_swapped_map() {
        let map = sheared_gstar();
        let g = grid(0.4, 2001);
        let (_, x2) = solve_axis_system(map.clone(), Axis::X2, &g, 1.0, 1e-13, 2000).unwrap();
        let swapped: MapRef = Arc::new(SwappedMap::new(map));
        let (_, direct) = solve_axis_system(swapped, Axis::X1, &g, 1.0, 1e-13, 2000).unwrap();
        assert_eq!(x2.p11.p.values, direct.p11.p.values);
        assert_eq!(x2.p12.p.values, direct.p12.p.values);
        assert_eq!(x2.p22.p.values, direct.p22.p.values);
    }
}
