//! Linearizing conjugacies by limit constructions, with residual and quotient checks.
//!
//! Every construction is available pointwise through [`PointwiseConjugacy`]; grid
//! results are the pointwise evaluator mapped over the nodes.

use std::cell::Cell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid2D, MatrixField2D, ScalarField2D, VectorField2D};
use crate::linalg::{diag, norm, op_norm, pt, Mat2, Point};
use crate::maps::{iterate_with_jacobian, MapError, PlanarMap};
use crate::quadrature::adaptive_simpson;
use crate::spectral::{classify_domain, DomainKind, SpectralParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConjugacyError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("construction needs the {expected:?} domain, map has eigenvalues ({lambda1}, {lambda2})")]
    Domain { expected: DomainKind, lambda1: f64, lambda2: f64 },
    #[error("map is not flat: defect {defect:e} at ({x1}, {x2})")]
    NotFlat { defect: f64, x1: f64, x2: f64 },
    #[error("inverse map unavailable")]
    InverseUnavailable,
    #[error("derivative product diverged: geometric decay fails from step {step} (last deviation {deviation:e})")]
    ProductDivergence { step: usize, deviation: f64 },
    #[error("level {level} is below the grid resolution {resolution}")]
    LevelUnderflow { level: f64, resolution: f64 },
    #[error("point ({x1}, {x2}) is outside the field grid")]
    OutsideGrid { x1: f64, x2: f64 },
    #[error("levels must be positive and decrease monotonically")]
    NonMonotoneLevels,
}

/// Stopping and reporting controls shared by the limit constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    pub tol: f64,
    pub max_n: usize,
    /// Consecutive non-decreasing Cauchy differences that declare divergence.
    pub divergence_window: usize,
    /// Residual is evaluated on every `residual_stride`-th node per direction (0 skips it).
    pub residual_stride: usize,
    /// Also compute the derivative field.
    pub with_jacobian: bool,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_n: 200, divergence_window: 20, residual_stride: 1, with_jacobian: true }
    }
}

impl LimitOptions {
    pub fn new(tol: f64, max_n: usize) -> Self {
        Self { tol, max_n, ..Self::default() }
    }
}

/// Pointwise limit value with its derivative and convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLimit {
    pub value: Point,
    pub jacobian: Mat2,
    pub steps: usize,
    pub converged: bool,
    /// Cauchy difference of the value after each step.
    pub history: Vec<f64>,
}

/// A conjugacy that can be evaluated at any point.
pub trait PointwiseConjugacy: Sync {
    fn evaluate(&self, x: Point, with_jacobian: bool) -> Result<PointLimit, ConjugacyError>;
    fn map(&self) -> &dyn PlanarMap;
    /// Extra diagnostics attached to grid results.
    fn eta(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    /// `a_n(O) = d(pi1 F^n)/dx1` at the origin.
    pub a_n_origin: Vec<f64>,
    /// `b_n(O) = d(pi1 F^n)/dx2` at the origin.
    pub b_n_origin: Vec<f64>,
    /// Fitted geometric ratio of the grid-sup Cauchy differences.
    pub geometric_ratio: f64,
    pub eta: Option<f64>,
    pub unconverged_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct ConjugacyResult {
    pub phi: VectorField2D,
    pub dphi: MatrixField2D,
    /// Sup of `||Phi(F(x)) - Lambda Phi(x)||` with `Phi` evaluated pointwise.
    pub residual_sup: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Grid-sup Cauchy difference per step.
    pub cauchy_history: Vec<f64>,
    pub diagnostics: IterationDiagnostics,
}

/// Least-squares ratio `r` with `h_n ~ C r^n` over the positive entries.
pub fn fit_geometric_ratio(history: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        history.iter().enumerate().filter(|(_, v)| **v > 0.0 && v.is_finite()).map(|(i, v)| (i as f64, v.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxy / sxx).exp()
}

struct RowOutcome {
    phi: Vec<Point>,
    dphi: Vec<Mat2>,
    history: Vec<f64>,
    steps: usize,
    unconverged: usize,
}

fn merge_history(into: &mut Vec<f64>, h: &[f64]) {
    if into.len() < h.len() {
        into.resize(h.len(), 0.0);
    }
    for (a, b) in into.iter_mut().zip(h) {
        *a = a.max(*b);
    }
}

/// Maps a pointwise conjugacy over `grid` and measures the pointwise residual.
pub fn evaluate_on_grid(conj: &dyn PointwiseConjugacy, grid: &Grid2D, opts: &LimitOptions) -> Result<ConjugacyResult, ConjugacyError> {
    if grid.is_empty() {
        return Err(ConjugacyError::EmptyGrid);
    }
    let rows: Vec<RowOutcome> = (0..grid.ny)
        .into_par_iter()
        .map(|j| {
            let mut row = RowOutcome {
                phi: Vec::with_capacity(grid.nx),
                dphi: Vec::with_capacity(grid.nx),
                history: Vec::new(),
                steps: 0,
                unconverged: 0,
            };
            for i in 0..grid.nx {
                let r = conj.evaluate(grid.point(i, j), opts.with_jacobian)?;
                row.phi.push(r.value);
                row.dphi.push(r.jacobian);
                merge_history(&mut row.history, &r.history);
                row.steps = row.steps.max(r.steps);
                if !r.converged {
                    row.unconverged += 1;
                }
            }
            Ok(row)
        })
        .collect::<Result<_, ConjugacyError>>()?;
    let mut phi = Vec::with_capacity(grid.len());
    let mut dphi = Vec::with_capacity(grid.len());
    let mut history = Vec::new();
    let mut steps = 0;
    let mut unconverged = 0;
    for row in rows {
        phi.extend(row.phi);
        dphi.extend(row.dphi);
        merge_history(&mut history, &row.history);
        steps = steps.max(row.steps);
        unconverged += row.unconverged;
    }
    let phi = VectorField2D::from_values(*grid, phi);
    let dphi = MatrixField2D::from_values(*grid, dphi);
    let residual_sup = if opts.residual_stride == 0 { f64::NAN } else { pointwise_residual(conj, &phi, opts.residual_stride)? };
    let map = conj.map();
    let (a_n_origin, b_n_origin) = origin_derivatives(map, steps.min(64))?;
    let diagnostics = IterationDiagnostics {
        a_n_origin,
        b_n_origin,
        geometric_ratio: fit_geometric_ratio(&history),
        eta: conj.eta(),
        unconverged_nodes: unconverged,
    };
    Ok(ConjugacyResult { phi, dphi, residual_sup, iterations: steps, converged: unconverged == 0, cauchy_history: history, diagnostics })
}

fn origin_derivatives(map: &dyn PlanarMap, n: usize) -> Result<(Vec<f64>, Vec<f64>), ConjugacyError> {
    let mut a = vec![1.0];
    let mut b = vec![0.0];
    let mut j = Mat2::identity();
    let o = Point::zeros();
    for _ in 0..n {
        j = map.jacobian(o)? * j;
        a.push(j[(0, 0)]);
        b.push(j[(0, 1)]);
    }
    Ok((a, b))
}

fn pointwise_residual(conj: &dyn PointwiseConjugacy, phi: &VectorField2D, stride: usize) -> Result<f64, ConjugacyError> {
    let grid = *phi.grid();
    let lam = conj.map().lambda();
    let nodes: Vec<(usize, usize)> =
        (0..grid.ny).step_by(stride).flat_map(|j| (0..grid.nx).step_by(stride).map(move |i| (i, j))).collect();
    let worst = nodes
        .par_iter()
        .map(|&(i, j)| {
            let x = grid.point(i, j);
            let y = conj.map().eval(x)?;
            let py = conj.evaluate(y, false)?.value;
            Ok(norm(&(py - lam * phi.get(i, j))))
        })
        .collect::<Result<Vec<f64>, ConjugacyError>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

fn check_domain(map: &dyn PlanarMap, expected: DomainKind) -> Result<(f64, f64), ConjugacyError> {
    let (l1, l2) = map.linear_part();
    let kind = classify_domain(&SpectralParams::new(l1, l2, 1.0));
    if kind != expected || (expected == DomainKind::Siegel && l1.abs() >= 1.0) {
        return Err(ConjugacyError::Domain { expected, lambda1: l1, lambda2: l2 });
    }
    Ok((l1, l2))
}

// ---------------------------------------------------------------------------
// Poincaré limit

/// `Phi = lim Lambda^{-n} F^n`, evaluated pointwise.
pub struct PoincareLimit<'a> {
    map: &'a dyn PlanarMap,
    opts: LimitOptions,
    lambda: (f64, f64),
}

impl<'a> PoincareLimit<'a> {
    pub fn new(map: &'a dyn PlanarMap, opts: LimitOptions) -> Result<Self, ConjugacyError> {
        let lambda = check_domain(map, DomainKind::PoincareContraction)?;
        Ok(Self { map, opts, lambda })
    }

    /// `Lambda^{-n} F^n(x)` for a fixed `n`.
    pub fn iterate_n(&self, x: Point, n: usize) -> Result<Point, ConjugacyError> {
        let (z, _) = iterate_with_jacobian(self.map, x, n as i64)?;
        Ok(pt(z[0] / self.lambda.0.powi(n as i32), z[1] / self.lambda.1.powi(n as i32)))
    }
}

impl PointwiseConjugacy for PoincareLimit<'_> {
    fn evaluate(&self, x: Point, with_jacobian: bool) -> Result<PointLimit, ConjugacyError> {
        let (l1, l2) = self.lambda;
        let trust = self.map.trust_radius();
        let mut z = x;
        let mut jac = Mat2::identity();
        let (mut s1, mut s2) = (1.0, 1.0);
        let mut value = x;
        let mut dvalue = Mat2::identity();
        let mut history = Vec::new();
        let mut stalled = 0;
        let mut prev = f64::INFINITY;
        for n in 1..=self.opts.max_n {
            let d;
            (z, d) = if with_jacobian { self.map.eval_with_jacobian(z)? } else { (self.map.eval(z)?, Mat2::zeros()) };
            if !(norm(&z) <= trust) {
                return Err(MapError::Escape { step: n, norm: norm(&z), radius: trust }.into());
            }
            s1 /= l1;
            s2 /= l2;
            let next = pt(s1 * z[0], s2 * z[1]);
            let diff = norm(&(next - value));
            value = next;
            if with_jacobian {
                jac = d * jac;
                dvalue = diag(s1, s2) * jac;
            }
            history.push(diff);
            if diff <= self.opts.tol {
                return Ok(PointLimit { value, jacobian: dvalue, steps: n, converged: true, history });
            }
            stalled = if diff >= prev { stalled + 1 } else { 0 };
            prev = diff;
            if stalled >= self.opts.divergence_window {
                return Ok(PointLimit { value, jacobian: dvalue, steps: n, converged: false, history });
            }
        }
        Ok(PointLimit { value, jacobian: dvalue, steps: self.opts.max_n, converged: false, history })
    }

    fn map(&self) -> &dyn PlanarMap {
        self.map
    }

    fn eta(&self) -> Option<f64> {
        self.map.nonlinearity_bound()
    }
}

pub fn linearize_poincare(map: &dyn PlanarMap, grid: &Grid2D, tol: f64, max_n: usize) -> Result<ConjugacyResult, ConjugacyError> {
    linearize_poincare_with(map, grid, &LimitOptions::new(tol, max_n))
}

pub fn linearize_poincare_with(map: &dyn PlanarMap, grid: &Grid2D, opts: &LimitOptions) -> Result<ConjugacyResult, ConjugacyError> {
    let limit = PoincareLimit::new(map, *opts)?;
    evaluate_on_grid(&limit, grid, opts)
}

// ---------------------------------------------------------------------------
// Differentiable-at-O construction for flat maps

/// `Phi(x) = (int_0^{x1} phi(t, x2) dt, x2)` with `phi = prod a1(F^i x)/lambda1`.
///
/// The product stops once the Cauchy difference is below `tol` and the tail
/// bound `expm1(L |z|^a / (|l1| (1 - r^a)))` is too, where `L` is the measured
/// Hölder constant of `d(pi1 F)/dx1` at `O`, `a` its exponent and `r = |l2| + eta`.
pub struct DifferentiableLimit<'a> {
    map: &'a dyn PlanarMap,
    opts: LimitOptions,
    lambda1: f64,
    holder_l: f64,
    holder_a: f64,
    rate: f64,
}

/// Sampled defect of the flat form `pi1 F(0, x2) = 0`, `pi2 F(x) = l2 x2` on `grid`.
pub fn flatness_defect(map: &dyn PlanarMap, grid: &Grid2D) -> Result<(f64, Point), ConjugacyError> {
    let (_, l2) = map.linear_part();
    let mut worst = (0.0, Point::zeros());
    for p in grid.points() {
        let y = map.eval(p)?;
        let d = (y[1] - l2 * p[1]).abs() / norm(&p).max(f64::MIN_POSITIVE);
        if d > worst.0 {
            worst = (d, p);
        }
        let q = pt(0.0, p[1]);
        let d = map.eval(q)?[0].abs() / q[1].abs().max(f64::MIN_POSITIVE);
        if d > worst.0 {
            worst = (d, q);
        }
    }
    Ok(worst)
}

impl<'a> DifferentiableLimit<'a> {
    pub fn new(map: &'a dyn PlanarMap, grid: &Grid2D, opts: LimitOptions) -> Result<Self, ConjugacyError> {
        let (l1, l2) = check_domain(map, DomainKind::PoincareContraction)?;
        let (defect, at) = flatness_defect(map, grid)?;
        if defect > 1e-8 {
            return Err(ConjugacyError::NotFlat { defect, x1: at[0], x2: at[1] });
        }
        let radius = grid.x_min.abs().max(grid.x_max.abs()).max(grid.y_min.abs()).max(grid.y_max.abs());
        let holder_a = map.holder_exponent().unwrap_or(1.0);
        let mut holder_l: f64 = 0.0;
        for k in 0..48 {
            let r = radius * 0.5f64.powi(k);
            for m in 0..64 {
                let t = -1.0 + 2.0 * m as f64 / 63.0;
                for z in [pt(r, t * r), pt(-r, t * r), pt(t * r, r), pt(t * r, -r)] {
                    let a1 = map.jacobian(z)?[(0, 0)];
                    holder_l = holder_l.max((a1 - l1).abs() / r.powf(holder_a));
                }
            }
        }
        let eta = match map.nonlinearity_bound() {
            Some(e) => e,
            None => crate::maps::measure_eta(map, radius, 81)?,
        };
        let rate = (l2.abs() + eta).min(1.0 - 1e-3);
        Ok(Self { map, opts, lambda1: l1, holder_l, holder_a, rate })
    }

    /// `phi(x) = lim lambda1^{-n} a_n(x)` with its step count.
    pub fn density(&self, x: Point) -> Result<(f64, usize), ConjugacyError> {
        let mut z = x;
        let mut phi = 1.0;
        let mut stalled = 0;
        let mut prev = f64::INFINITY;
        let mut last_decrease = 0;
        let denom = self.lambda1.abs() * (1.0 - self.rate.powf(self.holder_a));
        for n in 1..=self.opts.max_n {
            let (next, d) = self.map.eval_with_jacobian(z)?;
            let factor = d[(0, 0)] / self.lambda1;
            let updated = phi * factor;
            let diff = (updated - phi).abs();
            phi = updated;
            z = next;
            let tail = phi.abs() * (self.holder_l * norm(&z).powf(self.holder_a) / denom).exp_m1();
            if diff <= self.opts.tol && tail <= self.opts.tol {
                return Ok((phi, n));
            }
            if diff < prev {
                last_decrease = n;
                stalled = 0;
            } else if diff > self.opts.tol {
                stalled += 1;
            }
            prev = diff;
            if stalled >= self.opts.divergence_window {
                return Err(ConjugacyError::ProductDivergence { step: last_decrease, deviation: diff });
            }
        }
        Err(ConjugacyError::ProductDivergence { step: last_decrease, deviation: prev })
    }

    /// `pi1 Phi(x)` by adaptive Simpson on `[0, x1]`.
    pub fn first_component(&self, x: Point) -> Result<f64, ConjugacyError> {
        if x[0] == 0.0 {
            return Ok(0.0);
        }
        let failure: Cell<Option<ConjugacyError>> = Cell::new(None);
        let f = |t: f64| match self.density(pt(t, x[1])) {
            Ok((v, _)) => v,
            Err(e) => {
                failure.set(Some(e));
                f64::NAN
            }
        };
        let v = adaptive_simpson(&f, 0.0, x[0], self.opts.tol, 40);
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    pub fn holder_constant(&self) -> (f64, f64) {
        (self.holder_l, self.holder_a)
    }
}

impl PointwiseConjugacy for DifferentiableLimit<'_> {
    fn evaluate(&self, x: Point, with_jacobian: bool) -> Result<PointLimit, ConjugacyError> {
        let v = self.first_component(x)?;
        let (phi, steps) = self.density(x)?;
        let jacobian = if with_jacobian {
            let h = 1e-7;
            let up = self.first_component(x + pt(0.0, h))?;
            let down = self.first_component(x - pt(0.0, h))?;
            Mat2::new(phi, (up - down) / (2.0 * h), 0.0, 1.0)
        } else {
            Mat2::new(phi, 0.0, 0.0, 1.0)
        };
        Ok(PointLimit { value: pt(v, x[1]), jacobian, steps, converged: true, history: Vec::new() })
    }

    fn map(&self) -> &dyn PlanarMap {
        self.map
    }

    fn eta(&self) -> Option<f64> {
        self.map.nonlinearity_bound()
    }
}

pub fn linearize_differentiable(flat_map: &dyn PlanarMap, grid: &Grid2D, tol: f64) -> Result<ConjugacyResult, ConjugacyError> {
    let opts = LimitOptions { tol, ..LimitOptions::default() };
    linearize_differentiable_with(flat_map, grid, &opts)
}

pub fn linearize_differentiable_with(flat_map: &dyn PlanarMap, grid: &Grid2D, opts: &LimitOptions) -> Result<ConjugacyResult, ConjugacyError> {
    let limit = DifferentiableLimit::new(flat_map, grid, *opts)?;
    evaluate_on_grid(&limit, grid, opts)
}

// ---------------------------------------------------------------------------
// Siegel two-sided limit

/// `phi1 = lim l1^n pi1 F^{-n}`, `phi2 = lim l2^{-n} pi2 F^n` for a map with linear axes.
///
/// Each component stops exactly once its orbit leaves the support radius, and
/// otherwise when the Cauchy difference and the tail bound drop below `tol`.
pub struct SiegelLimit<'a> {
    map: &'a dyn PlanarMap,
    opts: LimitOptions,
    lambda: (f64, f64),
    eta_forward: f64,
    eta_backward: f64,
}

struct Component {
    value: f64,
    row: [f64; 2],
    steps: usize,
    converged: bool,
    history: Vec<f64>,
}

impl<'a> SiegelLimit<'a> {
    /// `region` bounds the sampling box for the nonlinearity bounds when the map does not supply one.
    pub fn new(map: &'a dyn PlanarMap, opts: LimitOptions, region: f64) -> Result<Self, ConjugacyError> {
        let lambda = check_domain(map, DomainKind::Siegel)?;
        if !map.has_inverse() {
            return Err(ConjugacyError::InverseUnavailable);
        }
        let radius = map.support_radius().filter(|r| *r > 0.0).unwrap_or(region);
        let eta_forward = match map.nonlinearity_bound() {
            Some(e) => e,
            None => crate::maps::measure_eta(map, radius, 81)?,
        };
        let inv_lam = diag(1.0 / lambda.0, 1.0 / lambda.1);
        let mut eta_backward: f64 = 0.0;
        let n = 81;
        for i in 0..n {
            for j in 0..n {
                let y = pt(-radius + 2.0 * radius * i as f64 / (n - 1) as f64, -radius + 2.0 * radius * j as f64 / (n - 1) as f64);
                eta_backward = eta_backward.max(op_norm(&(map.inverse_jacobian(y)? - inv_lam)));
            }
        }
        Ok(Self { map, opts, lambda, eta_forward, eta_backward })
    }

    pub fn eta_bounds(&self) -> (f64, f64) {
        (self.eta_forward, self.eta_backward)
    }

    fn forward(&self, x: Point, with_jacobian: bool) -> Result<Component, ConjugacyError> {
        let (l1, l2) = self.lambda;
        let ratio = (l1.abs() + self.eta_forward) / l2.abs();
        self.run(x, with_jacobian, 1, l2.recip(), ratio, self.eta_forward, |z| self.map.eval_with_jacobian(z))
    }

    fn backward(&self, x: Point, with_jacobian: bool) -> Result<Component, ConjugacyError> {
        let (l1, l2) = self.lambda;
        let ratio = l1.abs() * (1.0 / l2.abs() + self.eta_backward);
        self.run(x, with_jacobian, 0, l1, ratio, self.eta_backward, |z| self.map.inverse_with_jacobian(z))
    }

    /// Shared loop: component `c` scaled by `scale^n`, tail bound from the other coordinate.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        x: Point,
        with_jacobian: bool,
        c: usize,
        scale: f64,
        ratio: f64,
        eta: f64,
        step: impl Fn(Point) -> Result<(Point, Mat2), MapError>,
    ) -> Result<Component, ConjugacyError> {
        let other = 1 - c;
        let support = self.map.support_radius();
        let trust = self.map.trust_radius();
        let mut z = x;
        let mut jac = Mat2::identity();
        let mut s = 1.0;
        let mut value = x[c];
        let mut row = if c == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
        let mut history = Vec::new();
        let mut quiet = 0;
        let mut stalled = 0;
        let mut prev = f64::INFINITY;
        for n in 1..=self.opts.max_n {
            let (next, d) = step(z)?;
            z = next;
            s *= scale;
            let new_value = s * z[c];
            let diff = (new_value - value).abs();
            value = new_value;
            let mut jdiff = 0.0;
            if with_jacobian {
                jac = d * jac;
                let new_row = [s * jac[(c, 0)], s * jac[(c, 1)]];
                jdiff = (new_row[0] - row[0]).abs().max((new_row[1] - row[1]).abs());
                row = new_row;
            }
            history.push(diff);
            if support.is_some_and(|r| z[c].abs() >= r) {
                return Ok(Component { value, row, steps: n, converged: true, history });
            }
            let small = diff <= self.opts.tol && jdiff <= self.opts.tol;
            quiet = if small { quiet + 1 } else { 0 };
            let done = if ratio < 1.0 {
                let tail = eta * (s * scale).abs() * z[other].abs() / (1.0 - ratio);
                small && tail <= self.opts.tol
            } else {
                quiet >= 3
            };
            if done {
                return Ok(Component { value, row, steps: n, converged: true, history });
            }
            if !(norm(&z) <= trust) {
                if small {
                    return Ok(Component { value, row, steps: n, converged: true, history });
                }
                return Err(MapError::Escape { step: n, norm: norm(&z), radius: trust }.into());
            }
            stalled = if diff >= prev && diff > self.opts.tol { stalled + 1 } else { 0 };
            prev = diff;
            if stalled >= self.opts.divergence_window {
                return Ok(Component { value, row, steps: n, converged: false, history });
            }
        }
        Ok(Component { value, row, steps: self.opts.max_n, converged: false, history })
    }
}

impl PointwiseConjugacy for SiegelLimit<'_> {
    fn evaluate(&self, x: Point, with_jacobian: bool) -> Result<PointLimit, ConjugacyError> {
        let a = self.backward(x, with_jacobian)?;
        let b = self.forward(x, with_jacobian)?;
        let mut history = a.history;
        merge_history(&mut history, &b.history);
        Ok(PointLimit {
            value: pt(a.value, b.value),
            jacobian: Mat2::new(a.row[0], a.row[1], b.row[0], b.row[1]),
            steps: a.steps.max(b.steps),
            converged: a.converged && b.converged,
            history,
        })
    }

    fn map(&self) -> &dyn PlanarMap {
        self.map
    }

    fn eta(&self) -> Option<f64> {
        Some(self.eta_forward)
    }
}

pub fn linearize_siegel(flat_map: &dyn PlanarMap, grid: &Grid2D, tol: f64, max_n: usize) -> Result<ConjugacyResult, ConjugacyError> {
    linearize_siegel_with(flat_map, grid, &LimitOptions::new(tol, max_n))
}

pub fn linearize_siegel_with(flat_map: &dyn PlanarMap, grid: &Grid2D, opts: &LimitOptions) -> Result<ConjugacyResult, ConjugacyError> {
    let region = 4.0 * grid.x_min.abs().max(grid.x_max.abs()).max(grid.y_min.abs()).max(grid.y_max.abs());
    let limit = SiegelLimit::new(flat_map, *opts, region)?;
    evaluate_on_grid(&limit, grid, opts)
}

/// Fitted constants of the iterate bounds `|pi1 F^n x| <= M |l1|^n |x1|` and
/// `|pi2 F^{-n} x| <= M |l2|^{-n} |x2|`, and of `||DF^{+-n}||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateBounds {
    pub forward_m: f64,
    pub backward_m: f64,
    pub forward_jacobian_m: f64,
    pub backward_jacobian_m: f64,
    pub samples: usize,
}

pub fn fit_iterate_bounds(map: &dyn PlanarMap, points: &[Point], n_max: usize) -> Result<IterateBounds, ConjugacyError> {
    let (l1, l2) = map.linear_part();
    let trust = map.trust_radius();
    let mut out = IterateBounds { forward_m: 0.0, backward_m: 0.0, forward_jacobian_m: 0.0, backward_jacobian_m: 0.0, samples: 0 };
    for &x in points {
        let mut z = x;
        let mut j = Mat2::identity();
        for n in 1..=n_max {
            let (next, d) = map.eval_with_jacobian(z)?;
            if !(norm(&next) <= trust) {
                break;
            }
            z = next;
            j = d * j;
            if x[0] != 0.0 {
                out.forward_m = out.forward_m.max(z[0].abs() / (l1.abs().powi(n as i32) * x[0].abs()));
            }
            out.forward_jacobian_m = out.forward_jacobian_m.max(op_norm(&j) / l2.abs().powi(n as i32));
            out.samples += 1;
        }
        let mut w = x;
        let mut k = Mat2::identity();
        for n in 1..=n_max {
            let (next, d) = map.inverse_with_jacobian(w)?;
            if !(norm(&next) <= trust) {
                break;
            }
            w = next;
            k = d * k;
            if x[1] != 0.0 {
                out.backward_m = out.backward_m.max(w[1].abs() / (l2.abs().powi(-(n as i32)) * x[1].abs()));
            }
            out.backward_jacobian_m = out.backward_jacobian_m.max(op_norm(&k) * l1.abs().powi(n as i32));
            out.samples += 1;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Residuals and quotients

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Sup of `||Phi(F(x)) - Lambda Phi(x)||` over points whose image stays in the grid.
    pub sup: f64,
    /// Richardson-style estimate of the bilinear interpolation error.
    pub interpolation_error: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

/// Conjugacy residual with `Phi` bilinearly interpolated from a sampled field.
pub fn conjugacy_residual(phi: &VectorField2D, map: &dyn PlanarMap, grid: &Grid2D) -> Result<ResidualReport, ConjugacyError> {
    let lam = map.lambda();
    let coarse = coarsen(phi);
    let mut rep = ResidualReport { sup: 0.0, interpolation_error: 0.0, evaluated: 0, excluded: 0 };
    for x in grid.points() {
        let y = map.eval(x)?;
        let (Some(py), Some(px)) = (phi.interpolate(y), phi.interpolate(x)) else {
            rep.excluded += 1;
            continue;
        };
        rep.evaluated += 1;
        rep.sup = rep.sup.max(norm(&(py - lam * px)));
        if let Some(c) = &coarse {
            if let (Some(cy), Some(cx)) = (c.interpolate(y), c.interpolate(x)) {
                let e = norm(&(cy - py)).max(norm(&(cx - px))) / 3.0;
                rep.interpolation_error = rep.interpolation_error.max(e);
            }
        }
    }
    Ok(rep)
}

fn coarsen(phi: &VectorField2D) -> Option<VectorField2D> {
    let g = phi.grid();
    if g.nx < 5 || g.ny < 5 || g.nx % 2 == 0 || g.ny % 2 == 0 {
        return None;
    }
    let cg = Grid2D::new(g.x_min, g.x_max, g.y_min, g.y_max, g.nx / 2 + 1, g.ny / 2 + 1).ok()?;
    let vals = (0..cg.len())
        .map(|k| {
            let (i, j) = cg.coords(k);
            phi.get(2 * i, 2 * j)
        })
        .collect();
    Some(VectorField2D::from_values(cg, vals))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    FromAbove,
    FromBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientRow {
    pub direction: Direction,
    pub x2: f64,
    pub quotient: f64,
}

/// `[phi(xi, +-x2) - phi(xi, 0)] / (+-x2)` for each level.
pub fn one_sided_quotients(
    phi_component: &ScalarField2D,
    xi: f64,
    directions: &[Direction],
    levels: &[f64],
) -> Result<Vec<QuotientRow>, ConjugacyError> {
    if levels.iter().any(|l| !(*l > 0.0)) || levels.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ConjugacyError::NonMonotoneLevels);
    }
    let grid = phi_component.grid();
    let resolution = grid.dy();
    let at = |x2: f64| phi_component.interpolate(pt(xi, x2)).ok_or(ConjugacyError::OutsideGrid { x1: xi, x2 });
    let base = at(0.0)?;
    let mut rows = Vec::new();
    for &dir in directions {
        for &level in levels {
            if level < resolution * (1.0 - 1e-9) {
                return Err(ConjugacyError::LevelUnderflow { level, resolution });
            }
            let x2 = if dir == Direction::FromAbove { level } else { -level };
            rows.push(QuotientRow { direction: dir, x2, quotient: (at(x2)? - base) / x2 });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{make_poincare_counterexample, BumpProfile, LinearMap};

    #[test]
    fn linear_map_gives_identity_in_one_step() {
        let l = LinearMap::new(0.25, 0.5);
        let g = Grid2D::square(0.05, 11).unwrap();
        let r = linearize_poincare(&l, &g, 1e-10, 50).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.residual_sup < 1e-14);
        for (p, q) in r.phi.values().iter().zip(g.points()) {
            assert!(norm(&(p - q)) < 1e-15);
        }
        let s = linearize_siegel(&LinearMap::new(0.5, 2.0), &g, 1e-10, 50).unwrap();
        assert!(s.converged);
        assert_eq!(s.iterations, 1);
        assert!(s.residual_sup < 1e-14);
    }

    #[test]
    fn origin_jets() {
        let f = make_poincare_counterexample(SpectralParams::new(0.25, 0.5, 0.4), BumpProfile::default()).unwrap();
        let g = Grid2D::square(0.05, 5).unwrap();
        let r = linearize_poincare(&f, &g, 1e-10, 200).unwrap();
        for (n, (a, b)) in r.diagnostics.a_n_origin.iter().zip(&r.diagnostics.b_n_origin).enumerate() {
            assert_eq!(*a, 0.25f64.powi(n as i32));
            assert_eq!(*b, 0.0);
        }
    }

    #[test]
    fn perturbed_identity_residual_matches_hand_bound() {
        let l = LinearMap::new(0.5, 0.8);
        let g = Grid2D::square(0.1, 41).unwrap();
        let phi = VectorField2D::from_fn(g, |p| p + pt(1e-3 * p[0] * p[0], 0.0));
        let rep = conjugacy_residual(&phi, &l, &g).unwrap();
        let bound = 1e-3 * 0.1f64.powi(2) * (0.5f64 - 0.25).abs();
        assert!(rep.sup <= 4.0 * bound && rep.sup >= bound / 4.0, "{} vs {bound}", rep.sup);
        assert_eq!(rep.excluded, 0);
    }

    #[test]
    fn geometric_fit() {
        let h: Vec<f64> = (0..10).map(|n| 3.0 * 0.4f64.powi(n)).collect();
        assert!((fit_geometric_ratio(&h) - 0.4).abs() < 1e-12);
    }
}
