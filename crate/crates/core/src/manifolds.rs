//! Invariant-manifold graphs and the flattening transforms that straighten them.
//!
//! In the Poincaré domain `Θ = Θ2 ∘ Θ1` with `Θ1(x) = (x1, ψ(x))`,
//! `ψ = lim λ2^{-n} π2 F^n`, and `Θ2(x) = (x1 - g(x2), x2)` for the invariant graph
//! `x1 = g(x2)` of `Θ1 F Θ1⁻¹`. In the Siegel domain two shears move the unstable and
//! stable manifolds onto the coordinate axes.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funceq::{solve_jets, FuncEqError, JetSolution};
use crate::grid::{AxisFunction, AxisGrid, Grid2D, GridError, ScalarField2D, VectorField2D};
use crate::linalg::{op_norm, pt, Mat2, Point};
use crate::maps::{
    solve_bracketed, AxisInvariance, ChangeRef, ComposedChange, ConjugatedMap, CoordinateChange, IdentityChange, InverseMap,
    MapError, MapRef, PlanarMap, SwappedMap,
};
use crate::spectral::{classify_domain, DomainKind, SpectralParams};
use crate::whitney::{assemble_psi_star, jet_from_axis_data, AxisVerification, PsiStar, WhitneyError};

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("map is in the {found:?} domain, {expected:?} required")]
    Domain { expected: DomainKind, found: DomainKind },
    #[error("psi limit failed to reach tolerance after {iterations} terms (measured ratio {ratio})")]
    RateFailure { ratio: f64, iterations: usize },
    #[error("graph transform is not contracting at radius {radius} (measured ratio {ratio})")]
    NotContracting { ratio: f64, radius: f64 },
    #[error("graph transform did not converge in {iterations} iterations (last change {last:e})")]
    NoConvergence { iterations: usize, last: f64 },
    #[error("Theta1 is not invertible near ({x1}, {x2}): d psi / d x2 = {derivative}")]
    NotInvertible { x1: f64, x2: f64, derivative: f64 },
    #[error("{what}: residual {residual:e} exceeds {tolerance:e}")]
    Verification { what: &'static str, residual: f64, tolerance: f64 },
    #[error("the map has no inverse, which the stable graph needs")]
    NoInverse,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    FuncEq(#[from] FuncEqError),
    #[error(transparent)]
    Whitney(#[from] WhitneyError),
}

fn require_domain(map: &dyn PlanarMap, expected: DomainKind) -> Result<(), ManifoldError> {
    let (l1, l2) = map.linear_part();
    let found = classify_domain(&SpectralParams::new(l1, l2, 1.0));
    if found != expected {
        return Err(ManifoldError::Domain { expected, found });
    }
    Ok(())
}

/// Brackets a root of `f` around `guess` by doubling, then solves it.
fn solve_near(f: impl Fn(f64) -> (f64, f64), guess: f64, width: f64) -> Option<f64> {
    let (f0, _) = f(guess);
    if f0 == 0.0 {
        return Some(guess);
    }
    if !f0.is_finite() {
        return None;
    }
    let mut w = width.max(1e-300);
    for _ in 0..80 {
        let (a, b) = (guess - w, guess + w);
        let (fa, fb) = (f(a).0, f(b).0);
        if fa.is_finite() && fb.is_finite() && (fa.signum() != fb.signum() || fa == 0.0 || fb == 0.0) {
            return solve_bracketed(&f, a, b, guess, 1e-16).ok();
        }
        w *= 4.0;
    }
    None
}

// ---------------------------------------------------------------------------
// psi

/// Value and gradient of `ψ` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiValue {
    pub value: f64,
    pub gradient: Point,
    pub terms: usize,
    /// Largest ratio of consecutive nonzero terms in the tail.
    pub ratio: f64,
}

/// Pointwise evaluator of `ψ = lim λ2^{-n} π2 F^n`, summed as the telescoping series
/// `x2 + Σ λ2^{-(n+1)} (π2F(y_n) - λ2 π2 y_n)` along the orbit `y_n = F^n(x)`.
///
/// The series stops once the geometric tail bound drops below `tol · ||x||`.
#[derive(Clone)]
pub struct PsiLimit {
    map: MapRef,
    lambda2: f64,
    pub tol: f64,
    pub max_terms: usize,
}

/// Consecutive exactly-zero terms, counted inside the support, after which the series stops.
const ZERO_RUN: usize = 16;

impl PsiLimit {
    pub fn new(map: MapRef, tol: f64, max_terms: usize) -> Result<Self, ManifoldError> {
        require_domain(map.as_ref(), DomainKind::PoincareContraction)?;
        let lambda2 = map.linear_part().1;
        Ok(Self { map, lambda2, tol, max_terms })
    }

    pub fn map(&self) -> &MapRef {
        &self.map
    }

    pub fn eval(&self, x: Point) -> Result<PsiValue, ManifoldError> {
        let l2 = self.lambda2;
        let support = self.map.support_radius().unwrap_or(f64::INFINITY);
        let target = self.tol * x.amax();
        let mut y = x;
        let mut jac = Mat2::identity();
        let mut value = x[1];
        let mut gradient = pt(0.0, 1.0);
        let mut scale = 1.0 / l2;
        let mut prev = 0.0f64;
        let mut ratio = 0.0f64;
        let mut zeros = 0;
        for n in 0..self.max_terms {
            let (fy, dfy) = self.map.eval_with_jacobian(y)?;
            let r = fy[1] - l2 * y[1];
            let dr = pt(dfy[(1, 0)], dfy[(1, 1)] - l2);
            let g = pt(dr[0] * jac[(0, 0)] + dr[1] * jac[(1, 0)], dr[0] * jac[(0, 1)] + dr[1] * jac[(1, 1)]) * scale;
            let term = (r * scale).abs().max(g.amax() * x.amax());
            value += r * scale;
            gradient += g;
            jac = dfy * jac;
            y = fy;
            scale /= l2;
            if term == 0.0 {
                if y.amax() <= support || support == 0.0 {
                    zeros += 1;
                }
                if zeros >= ZERO_RUN || y.amax() == 0.0 {
                    return Ok(PsiValue { value, gradient, terms: n + 1, ratio });
                }
                continue;
            }
            zeros = 0;
            if prev > 0.0 {
                let q = term / prev;
                ratio = if n < 3 { q } else { ratio.max(q).min(q.max(0.5 * ratio)) };
                if q < 1.0 && ratio < 1.0 && term * ratio / (1.0 - ratio) <= target {
                    return Ok(PsiValue { value, gradient, terms: n + 1, ratio });
                }
            }
            prev = term;
        }
        Err(ManifoldError::RateFailure { ratio, iterations: self.max_terms })
    }
}

/// `ψ` sampled on a grid with its identity check.
#[derive(Debug, Clone)]
pub struct PsiField {
    pub psi: ScalarField2D,
    pub gradient: VectorField2D,
    /// Sup over the grid of `|ψ(F(x)) - λ2 ψ(x)|`.
    pub identity_residual: f64,
    /// `∇ψ(O)`.
    pub gradient_at_origin: Point,
    pub max_terms: usize,
    pub measured_ratio: f64,
}

/// `ψ` on `grid`, with the identity `ψ∘F = λ2ψ` checked pointwise.
pub fn compute_psi(map: MapRef, grid: &Grid2D, tol: f64) -> Result<PsiField, ManifoldError> {
    let limit = PsiLimit::new(map.clone(), tol, 10_000)?;
    let l2 = limit.lambda2;
    let points: Vec<Point> = grid.points().collect();
    let rows: Vec<(PsiValue, f64)> = points
        .par_iter()
        .map(|&x| {
            let v = limit.eval(x)?;
            let image = limit.eval(map.eval(x)?)?;
            Ok((v, (image.value - l2 * v.value).abs()))
        })
        .collect::<Result<_, ManifoldError>>()?;
    let origin = limit.eval(pt(0.0, 0.0))?;
    Ok(PsiField {
        psi: ScalarField2D::from_values(*grid, rows.iter().map(|r| r.0.value).collect()),
        gradient: VectorField2D::from_values(*grid, rows.iter().map(|r| r.0.gradient).collect()),
        identity_residual: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        gradient_at_origin: origin.gradient,
        max_terms: rows.iter().map(|r| r.0.terms).max().unwrap_or(0),
        measured_ratio: rows.iter().map(|r| r.0.ratio).fold(0.0, f64::max),
    })
}

// ---------------------------------------------------------------------------
// Invariant graphs

/// Graph `x1 = g(x2)` of an invariant curve through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantGraph {
    pub g: AxisFunction,
    /// Sup over nodes whose image stays on the grid of `|π1F(g(s),s) - g(π2F(g(s),s))|`.
    pub invariance_defect: f64,
    pub dg0: f64,
    pub iterations: usize,
    pub contraction_ratio: f64,
}

/// Cubic Lagrange interpolation of nodal values, zero outside the grid.
fn cubic(f: &AxisFunction, s: f64) -> (f64, f64) {
    let g = &f.grid;
    if !g.contains(s) {
        return (f.outside, 0.0);
    }
    let h = g.step();
    let u = (s - g.min) / h;
    let j = (u.floor() as isize - 1).clamp(0, g.n as isize - 4) as usize;
    let u = u - j as f64;
    if u == u.round() && (u as usize) < 4 {
        let k = u as usize;
        let v = f.values[j + k];
        let (_, d) = cubic_weights(u);
        let slope = (0..4).map(|m| d[m] * f.values[j + m]).sum::<f64>() / h;
        return (v, slope);
    }
    let (w, d) = cubic_weights(u);
    let v = (0..4).map(|m| w[m] * f.values[j + m]).sum();
    let slope = (0..4).map(|m| d[m] * f.values[j + m]).sum::<f64>() / h;
    (v, slope)
}

fn cubic_weights(u: f64) -> ([f64; 4], [f64; 4]) {
    let (a, b, c, d) = (u, u - 1.0, u - 2.0, u - 3.0);
    let w = [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0];
    let dw = [
        -(c * d + b * d + b * c) / 6.0,
        (c * d + a * d + a * c) / 2.0,
        -(b * d + a * d + a * b) / 2.0,
        (b * c + a * c + a * b) / 6.0,
    ];
    (w, dw)
}

impl InvariantGraph {
    pub fn zero(grid: AxisGrid) -> Self {
        Self { g: AxisFunction::constant(grid, 0.0), invariance_defect: 0.0, dg0: 0.0, iterations: 0, contraction_ratio: 0.0 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        cubic(&self.g, s).0
    }

    /// Interpolated slope, with the tangency `g'(0) = 0` imposed exactly at the origin.
    pub fn derivative(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        cubic(&self.g, s).1
    }

    pub fn is_zero(&self) -> bool {
        self.g.values.iter().all(|&v| v == 0.0)
    }
}

/// One application of the graph transform at node `t`: find `s` with
/// `π2F(g(s), s) = t` and return `π1F(g(s), s)`.
fn transform_at(map: &dyn PlanarMap, g: &AxisFunction, t: f64) -> Result<f64, ManifoldError> {
    let l2 = map.linear_part().1;
    let f = |s: f64| {
        let (gs, dg) = cubic(g, s);
        match map.eval_with_jacobian(pt(gs, s)) {
            Ok((y, j)) => (y[1] - t, j[(1, 0)] * dg + j[(1, 1)]),
            Err(_) => (f64::NAN, f64::NAN),
        }
    };
    let guess = t / l2;
    let width = 2.0 * f(guess).0.abs() / l2.abs() + 1e-15 * guess.abs();
    let s = solve_near(f, guess, width).ok_or(MapError::RootFinding { y1: 0.0, y2: t, residual: f64::NAN, iterations: 0 })?;
    Ok(map.eval(pt(cubic(g, s).0, s))?[0])
}

fn graph_defect(map: &dyn PlanarMap, g: &AxisFunction) -> Result<f64, ManifoldError> {
    let grid = g.grid;
    let rows: Vec<f64> = grid
        .nodes()
        .par_iter()
        .map(|&s| {
            let y = map.eval(pt(cubic(g, s).0, s))?;
            Ok(if grid.contains(y[1]) { (y[0] - cubic(g, y[1]).0).abs() } else { 0.0 })
        })
        .collect::<Result<_, ManifoldError>>()?;
    Ok(rows.into_iter().fold(0.0, f64::max))
}

/// Fixed point of the graph transform for the curve `x1 = g(x2)` tangent to the
/// `x2`-axis, by undamped iteration from `g = 0` with zero continuation off the grid.
pub fn compute_invariant_graph(map: &dyn PlanarMap, grid: &AxisGrid, tol: f64, max_iter: usize) -> Result<InvariantGraph, ManifoldError> {
    let nodes = grid.nodes();
    let mut g = AxisFunction::constant(*grid, 0.0);
    let mut history: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let next: Vec<f64> = nodes.par_iter().map(|&t| transform_at(map, &g, t)).collect::<Result<_, _>>()?;
        let change = next.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        g.values = next;
        history.push(change);
        let ratio = if history.len() >= 2 && history[history.len() - 2] > 0.0 {
            change / history[history.len() - 2]
        } else {
            0.0
        };
        if change <= tol {
            let ratios: Vec<f64> = history.windows(2).filter(|w| w[0] > 0.0 && w[1] > 0.0).map(|w| w[1] / w[0]).collect();
            let contraction_ratio = ratios.iter().cloned().fold(0.0, f64::max);
            let invariance_defect = graph_defect(map, &g)?;
            let dg0 = cubic(&g, 0.0).1;
            return Ok(InvariantGraph { g, invariance_defect, dg0, iterations: it, contraction_ratio });
        }
        let n = history.len();
        if n >= 4 && history[n - 3..].windows(2).all(|w| w[1] >= w[0]) && ratio >= 1.0 {
            return Err(ManifoldError::NotContracting { ratio, radius: grid.radius() });
        }
    }
    Err(ManifoldError::NoConvergence { iterations: max_iter, last: history.last().copied().unwrap_or(f64::NAN) })
}

/// Graph `x2 = g(x1)` of the invariant curve tangent to the `x1`-axis, computed as the
/// `x1 = g(x2)` graph of the swapped inverse map.
pub fn compute_transverse_graph(map: MapRef, grid: &AxisGrid, tol: f64, max_iter: usize) -> Result<InvariantGraph, ManifoldError> {
    if !map.has_inverse() {
        return Err(ManifoldError::NoInverse);
    }
    let swapped = SwappedMap::new(Arc::new(InverseMap::new(map)?));
    compute_invariant_graph(&swapped, grid, tol, max_iter)
}

// ---------------------------------------------------------------------------
// Coordinate changes

/// `(x1 - g(x2), x2)` when `along_x1`, otherwise `(x1, x2 - g(x1))`.
#[derive(Debug, Clone)]
pub struct GraphShear {
    pub graph: InvariantGraph,
    pub along_x1: bool,
}

impl CoordinateChange for GraphShear {
    fn forward(&self, x: Point) -> Result<Point, MapError> {
        Ok(if self.along_x1 { pt(x[0] - self.graph.eval(x[1]), x[1]) } else { pt(x[0], x[1] - self.graph.eval(x[0])) })
    }
    fn backward(&self, y: Point) -> Result<Point, MapError> {
        Ok(if self.along_x1 { pt(y[0] + self.graph.eval(y[1]), y[1]) } else { pt(y[0], y[1] + self.graph.eval(y[0])) })
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        Ok(if self.along_x1 {
            Mat2::new(1.0, -self.graph.derivative(x[1]), 0.0, 1.0)
        } else {
            Mat2::new(1.0, 0.0, -self.graph.derivative(x[0]), 1.0)
        })
    }
    fn is_identity(&self) -> bool {
        self.graph.is_zero()
    }
    fn label(&self) -> String {
        if self.along_x1 { "graph shear x1".into() } else { "graph shear x2".into() }
    }
}

/// `Θ = Θ2 ∘ Θ1` with `Θ1(x) = (x1, ψ(x))` and `Θ2(x) = (x1 - g(x2), x2)`.
#[derive(Clone)]
pub struct Theta {
    pub psi: PsiLimit,
    pub graph: InvariantGraph,
}

fn psi_error(e: ManifoldError) -> MapError {
    match e {
        ManifoldError::Map(m) => m,
        ManifoldError::RateFailure { ratio, iterations } => MapError::NoConvergence { iterations, last: ratio },
        _ => MapError::NoConvergence { iterations: 0, last: f64::NAN },
    }
}

impl Theta {
    /// `Θ1⁻¹(y)`: solves `ψ(y1, x2) = y2` for `x2`.
    pub fn theta1_inverse(&self, y: Point) -> Result<Point, MapError> {
        let f = |x2: f64| match self.psi.eval(pt(y[0], x2)) {
            Ok(v) => (v.value - y[1], v.gradient[1]),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let (f0, _) = f(y[1]);
        let width = 2.0 * f0.abs() + 1e-15 * y[1].abs();
        let x2 = solve_near(f, y[1], width).ok_or(MapError::RootFinding { y1: y[0], y2: y[1], residual: f0.abs(), iterations: 0 })?;
        Ok(pt(y[0], x2))
    }
}

impl CoordinateChange for Theta {
    fn forward(&self, x: Point) -> Result<Point, MapError> {
        let p = self.psi.eval(x).map_err(psi_error)?.value;
        Ok(pt(x[0] - self.graph.eval(p), p))
    }
    fn backward(&self, y: Point) -> Result<Point, MapError> {
        self.theta1_inverse(pt(y[0] + self.graph.eval(y[1]), y[1]))
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        let v = self.psi.eval(x).map_err(psi_error)?;
        let dg = self.graph.derivative(v.value);
        let (p1, p2) = (v.gradient[0], v.gradient[1]);
        Ok(Mat2::new(1.0 - dg * p1, -dg * p2, p1, p2))
    }
    fn label(&self) -> String {
        "Theta2 . Theta1".into()
    }
}

// ---------------------------------------------------------------------------
// Poincaré flattening

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlatteningKind {
    /// The map already satisfied the target normal form; the transform is the identity.
    Identity,
    /// `Θ2 ∘ Θ1` from the `ψ` limit and the weak invariant graph.
    PoincareTheta,
    /// Two graph shears onto the stable and unstable axes.
    SiegelAxes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlattenReport {
    /// Sup of `|π1F̃(0, x2)|` over sampled columns.
    pub axis_residual: f64,
    /// Sup of `|π2F̃(x) - λ2 x2|` over the verification grid.
    pub second_residual: f64,
    /// Sup of `||Θ⁻¹(Θ(x)) - x||`.
    pub round_trip: f64,
    /// `||DΘ(O) - id||` by central differences.
    pub origin_defect: f64,
    pub samples: usize,
}

pub struct FlatteningTransform {
    pub theta: ChangeRef,
    pub psi: ScalarField2D,
    pub graph: InvariantGraph,
    pub kind: FlatteningKind,
    pub report: FlattenReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlattenOptions {
    /// Half-width of the axis grid; defaults to the map's support radius.
    pub radius: Option<f64>,
    pub axis_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Verification grid is `verify_nodes²` points on `[-r, r]²`, `r = verify_fraction · radius`.
    pub verify_nodes: usize,
    pub verify_fraction: f64,
    pub verify_tol: f64,
}

impl Default for FlattenOptions {
    fn default() -> Self {
        Self { radius: None, axis_nodes: 801, tol: 1e-12, max_iter: 500, verify_nodes: 21, verify_fraction: 0.9, verify_tol: 1e-8 }
    }
}

impl FlattenOptions {
    fn radius_for(&self, map: &dyn PlanarMap) -> f64 {
        self.radius.or(map.support_radius().filter(|r| *r > 0.0)).unwrap_or(1.0)
    }
}

fn central_jacobian(change: &dyn CoordinateChange, x: Point, h: f64) -> Result<Mat2, MapError> {
    let e1 = (change.forward(x + pt(h, 0.0))? - change.forward(x - pt(h, 0.0))?) / (2.0 * h);
    let e2 = (change.forward(x + pt(0.0, h))? - change.forward(x - pt(0.0, h))?) / (2.0 * h);
    Ok(Mat2::new(e1[0], e2[0], e1[1], e2[1]))
}

fn check(what: &'static str, residual: f64, tolerance: f64) -> Result<(), ManifoldError> {
    if residual <= tolerance {
        Ok(())
    } else {
        Err(ManifoldError::Verification { what, residual, tolerance })
    }
}

/// Flattens a Poincaré-domain map: `F̃ = Θ F Θ⁻¹` has `π1F̃(0, x2) = 0` and
/// `π2F̃(x) = λ2 x2`, verified on a grid.
///
/// The weak invariant graph is computed for `F` itself and carried to `Θ1`
/// coordinates through `ψ`, which avoids nesting the `ψ` limit inside the transform.
pub fn flatten_poincare(map: MapRef, opts: &FlattenOptions) -> Result<(MapRef, FlatteningTransform), ManifoldError> {
    let radius = opts.radius_for(map.as_ref());
    let psi = PsiLimit::new(map.clone(), opts.tol, 10_000)?;
    let l2 = map.linear_part().1;
    let axis = AxisGrid::symmetric(radius, opts.axis_nodes)?;
    let r = opts.verify_fraction * radius;
    let verify = Grid2D::square(r, opts.verify_nodes)?;
    let points: Vec<Point> = verify.points().collect();

    let values: Vec<PsiValue> = points.par_iter().map(|&x| psi.eval(x)).collect::<Result<_, _>>()?;
    for (x, v) in points.iter().zip(&values) {
        if v.gradient[1] <= 0.0 {
            return Err(ManifoldError::NotInvertible { x1: x[0], x2: x[1], derivative: v.gradient[1] });
        }
    }
    let psi_field = ScalarField2D::from_values(verify, values.iter().map(|v| v.value).collect());
    let psi_trivial = points.iter().zip(&values).all(|(x, v)| v.value == x[1] && v.gradient == pt(0.0, 1.0));

    let h = compute_invariant_graph(map.as_ref(), &axis, opts.tol, opts.max_iter)?;
    if psi_trivial && h.is_zero() {
        let report = FlattenReport { axis_residual: 0.0, second_residual: 0.0, round_trip: 0.0, origin_defect: 0.0, samples: 0 };
        let theta: ChangeRef = Arc::new(IdentityChange);
        return Ok((map, FlatteningTransform { theta, psi: psi_field, graph: h, kind: FlatteningKind::Identity, report }));
    }

    let graph = if psi_trivial {
        h
    } else {
        let transported: Vec<f64> = axis
            .nodes()
            .par_iter()
            .map(|&t| {
                let f = |s: f64| {
                    let (hs, dh) = cubic(&h.g, s);
                    match psi.eval(pt(hs, s)) {
                        Ok(v) => (v.value - t, v.gradient[0] * dh + v.gradient[1]),
                        Err(_) => (f64::NAN, f64::NAN),
                    }
                };
                let f0 = f(t).0;
                let s = solve_near(f, t, 2.0 * f0.abs() + 1e-15 * t.abs())
                    .ok_or(MapError::RootFinding { y1: 0.0, y2: t, residual: f0.abs(), iterations: 0 })?;
                Ok(cubic(&h.g, s).0)
            })
            .collect::<Result<_, ManifoldError>>()?;
        let g = AxisFunction::new(axis, transported);
        let dg0 = cubic(&g, 0.0).1;
        InvariantGraph { g, invariance_defect: h.invariance_defect, dg0, iterations: h.iterations, contraction_ratio: h.contraction_ratio }
    };

    let theta = Arc::new(Theta { psi: psi.clone(), graph: graph.clone() });
    let flat: MapRef = Arc::new(ConjugatedMap::new(map.clone(), theta.clone()).with_axis_invariance(AxisInvariance {
        x1_axis: false,
        x2_axis: true,
    }));

    let rows: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|&x| {
            let y = flat.eval(x)?;
            let column = flat.eval(pt(0.0, x[1]))?;
            let back = theta.backward(theta.forward(x)?)?;
            Ok(((y[1] - l2 * x[1]).abs(), column[0].abs(), (back - x).amax()))
        })
        .collect::<Result<_, ManifoldError>>()?;
    let second_residual = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let axis_residual = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let round_trip = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let origin_defect = op_norm(&(central_jacobian(theta.as_ref(), pt(0.0, 0.0), 1e-6)? - Mat2::identity()));
    let report = FlattenReport { axis_residual, second_residual, round_trip, origin_defect, samples: points.len() };
    check("pi2 of the flattened map", second_residual, opts.verify_tol)?;
    check("pi1 of the flattened map on the x2-axis", axis_residual, opts.verify_tol)?;
    check("Theta round trip", round_trip, 1e-10)?;
    let theta_ref: ChangeRef = theta;
    Ok((flat, FlatteningTransform { theta: theta_ref, psi: psi_field, graph, kind: FlatteningKind::PoincareTheta, report }))
}

// ---------------------------------------------------------------------------
// Siegel axes

/// Both invariant manifolds of a saddle and the conjugated map they straighten.
pub struct StraightenedAxes {
    pub map: MapRef,
    pub change: ChangeRef,
    /// Unstable manifold `x1 = a(x2)`.
    pub unstable: InvariantGraph,
    /// Stable manifold `x2 = b(x1)`.
    pub stable: InvariantGraph,
    /// Sup of `|π2F'(s, 0)|` and `|π1F'(0, s)|` over the axis samples.
    pub axis_residual: f64,
    pub samples: usize,
    pub kind: FlatteningKind,
}

/// Axis-invariance residual of `map` on `samples` points per axis in `[-r, r]`.
pub fn axis_residual(map: &dyn PlanarMap, r: f64, samples: usize) -> Result<f64, MapError> {
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let s = r * (-1.0 + 2.0 * (k as f64 + 0.5) / samples as f64);
        worst = worst.max(map.eval(pt(s, 0.0))?[1].abs()).max(map.eval(pt(0.0, s))?[0].abs());
    }
    Ok(worst)
}

/// Conjugates a Siegel-domain map by `S2 ∘ S1`, `S1 = (x1 - a(x2), x2)`,
/// `S2 = (x1, x2 - b̃(x1))`, where `a` is the unstable graph and `b̃` the stable graph
/// after `S1`. Axis invariance is checked on `samples` points per axis.
pub fn straighten_siegel_axes(map: MapRef, opts: &FlattenOptions, samples: usize) -> Result<StraightenedAxes, ManifoldError> {
    require_domain(map.as_ref(), DomainKind::Siegel)?;
    let radius = opts.radius_for(map.as_ref());
    let grid = AxisGrid::symmetric(radius, opts.axis_nodes)?;
    let (l1, l2) = map.linear_part();
    let reach = 0.9 * radius / l1.abs().recip().max(l2.abs()).max(1.0);
    let unstable = compute_invariant_graph(map.as_ref(), &grid, opts.tol, opts.max_iter)?;
    let stable = compute_transverse_graph(map.clone(), &grid, opts.tol, opts.max_iter)?;
    if unstable.is_zero() && stable.is_zero() {
        let residual = axis_residual(map.as_ref(), reach, samples)?;
        check("axis invariance", residual, opts.verify_tol)?;
        return Ok(StraightenedAxes {
            map,
            change: Arc::new(IdentityChange),
            unstable,
            stable,
            axis_residual: residual,
            samples: 2 * samples,
            kind: FlatteningKind::Identity,
        });
    }
    let s1 = GraphShear { graph: unstable.clone(), along_x1: true };
    let carried: Vec<f64> = grid
        .nodes()
        .par_iter()
        .map(|&u| {
            let f = |r: f64| {
                let (b, db) = cubic(&stable.g, r);
                let (a, da) = cubic(&unstable.g, b);
                (r - a - u, 1.0 - da * db)
            };
            let f0 = f(u).0;
            let r = solve_near(f, u, 2.0 * f0.abs() + 1e-15 * u.abs())
                .ok_or(MapError::RootFinding { y1: u, y2: 0.0, residual: f0.abs(), iterations: 0 })?;
            Ok(cubic(&stable.g, r).0)
        })
        .collect::<Result<_, ManifoldError>>()?;
    let g = AxisFunction::new(grid, carried);
    let dg0 = cubic(&g, 0.0).1;
    let stable_carried = InvariantGraph { g, dg0, ..stable.clone() };
    let s2 = GraphShear { graph: stable_carried, along_x1: false };
    let change: ChangeRef = Arc::new(ComposedChange { outer: Arc::new(s2), inner: Arc::new(s1) });
    let straight: MapRef = Arc::new(ConjugatedMap::new(map, change.clone()).with_axis_invariance(AxisInvariance::BOTH));
    let residual = axis_residual(straight.as_ref(), reach, samples)?;
    check("axis invariance", residual, opts.verify_tol)?;
    Ok(StraightenedAxes {
        map: straight,
        change,
        unstable,
        stable,
        axis_residual: residual,
        samples: 2 * samples,
        kind: FlatteningKind::SiegelAxes,
    })
}

/// Result of the full Siegel flattening: axes straightened, axis jets solved, and the
/// Whitney change `Ψ*` applied so that `DF̃ = Λ` along both axes.
pub struct SiegelFlattening {
    pub axes: StraightenedAxes,
    pub jets: JetSolution,
    pub psi_star: Arc<PsiStar>,
    pub flat_map: MapRef,
    pub verification: AxisVerification,
}

pub fn flatten_siegel(map: MapRef, opts: &FlattenOptions, alpha: f64) -> Result<SiegelFlattening, ManifoldError> {
    let axes = straighten_siegel_axes(map, opts, 500)?;
    let radius = opts.radius_for(axes.map.as_ref());
    let grid = AxisGrid::symmetric(radius, opts.axis_nodes)?;
    let jets = solve_jets(axes.map.clone(), &grid, &grid, alpha, opts.tol.max(1e-13), opts.max_iter.max(2000))?;
    let (first, second) = jet_from_axis_data(&jets.jets)?;
    let (psi_star, flat_map, verification) = assemble_psi_star(first, second, axes.map.clone(), 10, 0.4, 1e-6)?;
    Ok(SiegelFlattening { axes, jets, psi_star, flat_map, verification })
}
