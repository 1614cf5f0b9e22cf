//! Planar map families, the smoothing and bump machinery, and iteration utilities.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{diag, inverse, norm, op_norm, pt, Mat2, Point};
use crate::quadrature::adaptive_simpson;
use crate::spectral::{classify_domain, DomainKind, SpectralParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MapError {
    #[error("u is undefined at the origin")]
    DomainAtOrigin,
    #[error("map has no inverse")]
    NoInverse,
    #[error("root finding failed at y = ({y1}, {y2}): residual {residual:e} after {iterations} iterations")]
    RootFinding { y1: f64, y2: f64, residual: f64, iterations: usize },
    #[error("iterate escaped the trust region of radius {radius} at step {step} (norm {norm})")]
    Escape { step: usize, norm: f64, radius: f64 },
    #[error("singular Jacobian at ({x1}, {x2})")]
    Singular { x1: f64, x2: f64 },
    #[error("map family requires the {expected:?} domain, parameters are {found:?}")]
    InvalidDomain { expected: DomainKind, found: DomainKind },
    #[error("bump radii must satisfy 0 < inner < outer, got inner = {inner}, outer = {outer}")]
    InvalidProfile { inner: f64, outer: f64 },
    #[error("alpha = {0} is outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("limit did not converge after {iterations} terms (last term {last:e})")]
    NoConvergence { iterations: usize, last: f64 },
    #[error("shear amplitude {amplitude} breaks monotonicity (limit {limit})")]
    InvalidShear { amplitude: f64, limit: f64 },
}

pub type MapRef = Arc<dyn PlanarMap>;

/// Which coordinate axes the map leaves invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AxisInvariance {
    pub x1_axis: bool,
    pub x2_axis: bool,
}

impl AxisInvariance {
    pub const BOTH: Self = Self { x1_axis: true, x2_axis: true };
    pub const NONE: Self = Self { x1_axis: false, x2_axis: false };
}

/// A planar diffeomorphism fixing the origin with diagonal linear part.
pub trait PlanarMap: Send + Sync {
    fn eval(&self, x: Point) -> Result<Point, MapError>;

    fn jacobian(&self, x: Point) -> Result<Mat2, MapError>;

    fn eval_with_jacobian(&self, x: Point) -> Result<(Point, Mat2), MapError> {
        Ok((self.eval(x)?, self.jacobian(x)?))
    }

    fn has_inverse(&self) -> bool {
        false
    }

    fn inverse(&self, _y: Point) -> Result<Point, MapError> {
        Err(MapError::NoInverse)
    }

    /// Jacobian of the inverse map at `y`.
    fn inverse_jacobian(&self, y: Point) -> Result<Mat2, MapError> {
        Ok(self.inverse_with_jacobian(y)?.1)
    }

    fn inverse_with_jacobian(&self, y: Point) -> Result<(Point, Mat2), MapError> {
        let x = self.inverse(y)?;
        let j = self.jacobian(x)?;
        let inv = inverse(&j).ok_or(MapError::Singular { x1: x[0], x2: x[1] })?;
        Ok((x, inv))
    }

    /// Eigenvalues `(lambda1, lambda2)` of `DF(O)`.
    fn linear_part(&self) -> (f64, f64);

    fn lambda(&self) -> Mat2 {
        let (a, b) = self.linear_part();
        diag(a, b)
    }

    fn axis_invariance(&self) -> AxisInvariance {
        AxisInvariance::NONE
    }

    /// Max-norm radius beyond which both the map and its inverse are exactly linear.
    fn support_radius(&self) -> Option<f64> {
        None
    }

    /// Iterates leaving this max-norm ball abort with [`MapError::Escape`].
    fn trust_radius(&self) -> f64 {
        f64::INFINITY
    }

    /// Attained sup of `||DF(x) - Lambda||`, when the map knows it.
    fn nonlinearity_bound(&self) -> Option<f64> {
        None
    }

    /// Hölder exponent of `DF`, when the map knows it.
    fn holder_exponent(&self) -> Option<f64> {
        None
    }

    fn label(&self) -> String;
}

// ---------------------------------------------------------------------------
// Smoothing kernel

const KERNEL_INTERVALS: usize = 4096;

/// The kernel `q(t) = exp(1/(t(t-1)))` on `(0,1)` with its normalized cumulative integral.
#[derive(Debug, Clone)]
pub struct SmoothingKernel {
    normalization: f64,
    quadrature_tolerance: f64,
    cdf: Vec<f64>,
}

impl SmoothingKernel {
    /// Builds the cumulative table by adaptive Simpson on each of 4096 cells.
    pub fn new(quadrature_tolerance: f64) -> Self {
        let h = 1.0 / KERNEL_INTERVALS as f64;
        let cell_tol = quadrature_tolerance / KERNEL_INTERVALS as f64;
        let mut cdf = Vec::with_capacity(KERNEL_INTERVALS + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for k in 0..KERNEL_INTERVALS {
            let a = k as f64 * h;
            acc += adaptive_simpson(&Self::q, a, a + h, cell_tol, 40);
            cdf.push(acc);
        }
        let normalization = acc;
        for v in &mut cdf {
            *v /= normalization;
        }
        cdf[KERNEL_INTERVALS] = 1.0;
        Self { normalization, quadrature_tolerance, cdf }
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn quadrature_tolerance(&self) -> f64 {
        self.quadrature_tolerance
    }

    /// Raw kernel `q(t)`, zero outside `(0,1)`.
    pub fn q(t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            0.0
        } else {
            (1.0 / (t * (t - 1.0))).exp()
        }
    }

    pub fn q_prime(t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        let d = t * (t - 1.0);
        Self::q(t) * (-(2.0 * t - 1.0) / (d * d))
    }

    /// `Q(s) = int_{-inf}^s q / N`, cubic Hermite on the cached table.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let h = 1.0 / KERNEL_INTERVALS as f64;
        let x = s * KERNEL_INTERVALS as f64;
        let k = (x.floor() as usize).min(KERNEL_INTERVALS - 1);
        let t = x - k as f64;
        let t0 = k as f64 * h;
        let m0 = Self::q(t0) / self.normalization;
        let m1 = Self::q(t0 + h) / self.normalization;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        (h00 * self.cdf[k] + h10 * h * m0 + h01 * self.cdf[k + 1] + h11 * h * m1).clamp(0.0, 1.0)
    }

    /// `Q'(s) = q(s)/N`.
    pub fn density(&self, s: f64) -> f64 {
        Self::q(s) / self.normalization
    }

    pub fn density_prime(&self, s: f64) -> f64 {
        Self::q_prime(s) / self.normalization
    }
}

/// Process-wide kernel with quadrature tolerance 1e-13.
pub fn kernel() -> &'static SmoothingKernel {
    static KERNEL: OnceLock<SmoothingKernel> = OnceLock::new();
    KERNEL.get_or_init(|| SmoothingKernel::new(1e-13))
}

/// `s^(1+alpha)` for `s > 0`, else 0.
pub fn p_alpha(s: f64, alpha: f64) -> f64 {
    if s > 0.0 {
        s.powf(1.0 + alpha)
    } else {
        0.0
    }
}

pub fn p_alpha_prime(s: f64, alpha: f64) -> f64 {
    if s > 0.0 {
        (1.0 + alpha) * s.powf(alpha)
    } else {
        0.0
    }
}

/// The switch `u(x1, x2) = Q(x1/|x2|)`: 1 for `x1 >= |x2|`, 0 for `x1 <= 0`.
pub fn u(x1: f64, x2: f64) -> Result<f64, MapError> {
    if x1 == 0.0 && x2 == 0.0 {
        return Err(MapError::DomainAtOrigin);
    }
    Ok(u_parts(x1, x2).0)
}

/// Gradient of [`u`], zero on the open half-axes `x2 = 0`.
pub fn u_gradient(x1: f64, x2: f64) -> Result<[f64; 2], MapError> {
    if x1 == 0.0 && x2 == 0.0 {
        return Err(MapError::DomainAtOrigin);
    }
    let (_, da, db) = u_parts(x1, x2);
    Ok([da, db])
}

/// `(u, du/dx1, du/dx2)` with the origin mapped to zeros.
#[inline]
pub(crate) fn u_parts(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (if a > 0.0 { 1.0 } else { 0.0 }, 0.0, 0.0);
    }
    if a <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let k = kernel();
    let bb = b.abs();
    let s = a / bb;
    if s >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let d = k.density(s);
    (k.cdf(s), d / bb, -d * s * b.signum() / bb)
}

// ---------------------------------------------------------------------------
// Bump

/// Radial bump equal to 1 on the disk `U` and 0 outside the disk `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Attained sup of `||DF(x) - Lambda||` once a map is built with this profile.
    pub eta_bound: Option<f64>,
}

impl BumpProfile {
    pub fn new(inner_radius: f64, outer_radius: f64) -> Result<Self, MapError> {
        if !(inner_radius > 0.0 && outer_radius > inner_radius && outer_radius.is_finite()) {
            return Err(MapError::InvalidProfile { inner: inner_radius, outer: outer_radius });
        }
        Ok(Self { inner_radius, outer_radius, eta_bound: None })
    }
}

impl Default for BumpProfile {
    fn default() -> Self {
        Self { inner_radius: 0.1, outer_radius: 0.2, eta_bound: None }
    }
}

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`, C-infinity in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

pub fn smooth_step_prime(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    let s = a + b;
    a * b * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t))) / (s * s)
}

pub fn bump(x: Point, profile: &BumpProfile) -> f64 {
    let r = x.norm();
    smooth_step((profile.outer_radius - r) / (profile.outer_radius - profile.inner_radius))
}

pub fn bump_gradient(x: Point, profile: &BumpProfile) -> Point {
    let r = x.norm();
    let w = profile.outer_radius - profile.inner_radius;
    let t = (profile.outer_radius - r) / w;
    if t <= 0.0 || t >= 1.0 || r == 0.0 {
        return Point::zeros();
    }
    x * (-smooth_step_prime(t) / (w * r))
}

// ---------------------------------------------------------------------------
// Scalar root finding

/// Safeguarded Newton on a sign-changing bracket. `f` returns value and derivative.
pub(crate) fn solve_bracketed(
    f: impl Fn(f64) -> (f64, f64),
    a: f64,
    b: f64,
    guess: f64,
    rel_tol: f64,
) -> Result<f64, (f64, usize)> {
    let (fa, _) = f(a);
    if fa == 0.0 {
        return Ok(a);
    }
    let (fb, _) = f(b);
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err((fa.abs().min(fb.abs()), 0));
    }
    let (mut neg, mut pos) = if fa < 0.0 { (a, b) } else { (b, a) };
    let mut x = if guess > a.min(b) && guess < a.max(b) { guess } else { 0.5 * (a + b) };
    let mut last = f64::INFINITY;
    for it in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        last = fx.abs();
        if fx < 0.0 {
            neg = x;
        } else {
            pos = x;
        }
        let lo = neg.min(pos);
        let hi = neg.max(pos);
        let newton = x - fx / dfx;
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let scale = next.abs().max(f64::MIN_POSITIVE);
        if (next - x).abs() <= rel_tol * scale || hi - lo <= rel_tol * lo.abs().max(hi.abs()) {
            return Ok(next);
        }
        x = next;
        let _ = it;
    }
    Err((last, 200))
}

// ---------------------------------------------------------------------------
// Map families

/// `x -> diag(lambda1, lambda2) x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMap {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LinearMap {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        Self { lambda1, lambda2 }
    }
}

impl PlanarMap for LinearMap {
    fn eval(&self, x: Point) -> Result<Point, MapError> {
        Ok(pt(self.lambda1 * x[0], self.lambda2 * x[1]))
    }
    fn jacobian(&self, _x: Point) -> Result<Mat2, MapError> {
        Ok(diag(self.lambda1, self.lambda2))
    }
    fn has_inverse(&self) -> bool {
        true
    }
    fn inverse(&self, y: Point) -> Result<Point, MapError> {
        Ok(pt(y[0] / self.lambda1, y[1] / self.lambda2))
    }
    fn inverse_with_jacobian(&self, y: Point) -> Result<(Point, Mat2), MapError> {
        Ok((self.inverse(y)?, diag(1.0 / self.lambda1, 1.0 / self.lambda2)))
    }
    fn linear_part(&self) -> (f64, f64) {
        (self.lambda1, self.lambda2)
    }
    fn axis_invariance(&self) -> AxisInvariance {
        AxisInvariance::BOTH
    }
    fn support_radius(&self) -> Option<f64> {
        Some(0.0)
    }
    fn nonlinearity_bound(&self) -> Option<f64> {
        Some(0.0)
    }
    fn label(&self) -> String {
        format!("linear({}, {})", self.lambda1, self.lambda2)
    }
}

/// `F*(x) = (l1 x1 + rho(x) u(l1 x1, l2 x2) p_alpha(l2 x2), l2 x2)`.
#[derive(Debug, Clone)]
pub struct PoincareCounterexample {
    params: SpectralParams,
    profile: BumpProfile,
}

pub fn make_poincare_counterexample(params: SpectralParams, profile: BumpProfile) -> Result<PoincareCounterexample, MapError> {
    check_params(&params, DomainKind::PoincareContraction)?;
    let profile = BumpProfile::new(profile.inner_radius, profile.outer_radius)?;
    let mut map = PoincareCounterexample { params, profile };
    let r = profile.outer_radius;
    map.profile.eta_bound = Some(measure_eta(&map, r, 81)?);
    Ok(map)
}

fn check_params(params: &SpectralParams, expected: DomainKind) -> Result<(), MapError> {
    if !(params.alpha > 0.0 && params.alpha <= 1.0) {
        return Err(MapError::InvalidAlpha(params.alpha));
    }
    let found = classify_domain(params);
    if found != expected {
        return Err(MapError::InvalidDomain { expected, found });
    }
    Ok(())
}

impl PoincareCounterexample {
    pub fn params(&self) -> &SpectralParams {
        &self.params
    }

    pub fn profile(&self) -> &BumpProfile {
        &self.profile
    }

    /// Perturbation term of the first component and its gradient.
    fn perturbation(&self, x: Point) -> (f64, f64, f64) {
        let SpectralParams { lambda1: l1, lambda2: l2, alpha } = self.params;
        let a = l1 * x[0];
        let b = l2 * x[1];
        let p = p_alpha(b, alpha);
        if p == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let (uu, ua, ub) = u_parts(a, b);
        if uu == 0.0 && ua == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let rho = bump(x, &self.profile);
        if rho == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let drho = bump_gradient(x, &self.profile);
        let dp = p_alpha_prime(b, alpha);
        let v = rho * uu * p;
        let d1 = drho[0] * uu * p + rho * ua * l1 * p;
        let d2 = drho[1] * uu * p + rho * (ub * l2 * p + uu * dp * l2);
        (v, d1, d2)
    }
}

impl PlanarMap for PoincareCounterexample {
    fn eval(&self, x: Point) -> Result<Point, MapError> {
        let (v, _, _) = self.perturbation(x);
        Ok(pt(self.params.lambda1 * x[0] + v, self.params.lambda2 * x[1]))
    }

    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        let (_, d1, d2) = self.perturbation(x);
        Ok(Mat2::new(self.params.lambda1 + d1, d2, 0.0, self.params.lambda2))
    }

    fn eval_with_jacobian(&self, x: Point) -> Result<(Point, Mat2), MapError> {
        let (v, d1, d2) = self.perturbation(x);
        let (l1, l2) = (self.params.lambda1, self.params.lambda2);
        Ok((pt(l1 * x[0] + v, l2 * x[1]), Mat2::new(l1 + d1, d2, 0.0, l2)))
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn inverse(&self, y: Point) -> Result<Point, MapError> {
        let (l1, l2) = (self.params.lambda1, self.params.lambda2);
        let x2 = y[1] / l2;
        let guess = y[0] / l1;
        let cap = p_alpha(y[1], self.params.alpha);
        if cap == 0.0 {
            return Ok(pt(guess, x2));
        }
        let f = |x1: f64| {
            let (v, d1, _) = self.perturbation(pt(x1, x2));
            (l1 * x1 + v - y[0], l1 + d1)
        };
        if f(guess).0 == 0.0 {
            return Ok(pt(guess, x2));
        }
        let slack = 1e-12 * (y[0].abs() + cap);
        let a = (y[0] - cap - slack) / l1;
        let b = (y[0] + slack) / l1;
        let x1 = solve_bracketed(f, a, b, guess, 1e-14).map_err(|(residual, iterations)| MapError::RootFinding {
            y1: y[0],
            y2: y[1],
            residual,
            iterations,
        })?;
        Ok(pt(x1, x2))
    }

    fn linear_part(&self) -> (f64, f64) {
        (self.params.lambda1, self.params.lambda2)
    }

    fn axis_invariance(&self) -> AxisInvariance {
        AxisInvariance::BOTH
    }

    fn support_radius(&self) -> Option<f64> {
        Some(self.profile.outer_radius)
    }

    fn trust_radius(&self) -> f64 {
        10.0 * self.profile.outer_radius
    }

    fn nonlinearity_bound(&self) -> Option<f64> {
        self.profile.eta_bound
    }

    fn holder_exponent(&self) -> Option<f64> {
        Some(self.params.alpha)
    }

    fn label(&self) -> String {
        format!("poincare-counterexample({}, {}, alpha={})", self.params.lambda1, self.params.lambda2, self.params.alpha)
    }
}

/// `G* = G^{-1}` with `G(x) = (x1/l1, x2/l2 + rho(x) u(x2/l2, x1/l1) p_alpha(x1/l1))`.
#[derive(Debug, Clone)]
pub struct SiegelCounterexample {
    params: SpectralParams,
    profile: BumpProfile,
    root_tolerance: f64,
}

pub fn make_siegel_counterexample(params: SpectralParams, profile: BumpProfile) -> Result<SiegelCounterexample, MapError> {
    check_params(&params, DomainKind::Siegel)?;
    if params.lambda1.abs() >= 1.0 {
        return Err(MapError::InvalidDomain { expected: DomainKind::Siegel, found: DomainKind::Siegel });
    }
    let profile = BumpProfile::new(profile.inner_radius, profile.outer_radius)?;
    let mut map = SiegelCounterexample { params, profile, root_tolerance: 1e-13 };
    let r = map.support_radius().unwrap_or(profile.outer_radius);
    map.profile.eta_bound = Some(measure_eta(&map, r, 81)?);
    Ok(map)
}

impl SiegelCounterexample {
    pub fn params(&self) -> &SpectralParams {
        &self.params
    }

    pub fn profile(&self) -> &BumpProfile {
        &self.profile
    }

    /// Second-component perturbation of `G` and its gradient.
    fn perturbation(&self, x: Point) -> (f64, f64, f64) {
        let SpectralParams { lambda1: l1, lambda2: l2, alpha } = self.params;
        let b = x[0] / l1;
        let p = p_alpha(b, alpha);
        if p == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let a = x[1] / l2;
        let (uu, ua, ub) = u_parts(a, b);
        if uu == 0.0 && ua == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let rho = bump(x, &self.profile);
        if rho == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let drho = bump_gradient(x, &self.profile);
        let dp = p_alpha_prime(b, alpha);
        let v = rho * uu * p;
        let d1 = drho[0] * uu * p + rho * (ub * p + uu * dp) / l1;
        let d2 = drho[1] * uu * p + rho * ua * p / l2;
        (v, d1, d2)
    }

    /// The map `G` (inverse of this map).
    pub fn g(&self, x: Point) -> Point {
        let (v, _, _) = self.perturbation(x);
        pt(x[0] / self.params.lambda1, x[1] / self.params.lambda2 + v)
    }

    pub fn g_jacobian(&self, x: Point) -> Mat2 {
        let (_, d1, d2) = self.perturbation(x);
        Mat2::new(1.0 / self.params.lambda1, 0.0, d1, 1.0 / self.params.lambda2 + d2)
    }

    fn solve(&self, y: Point) -> Result<Point, MapError> {
        let SpectralParams { lambda1: l1, lambda2: l2, alpha } = self.params;
        let x1 = l1 * y[0];
        let guess = l2 * y[1];
        let cap = p_alpha(y[0], alpha);
        if cap == 0.0 {
            return Ok(pt(x1, guess));
        }
        let f = |x2: f64| {
            let (v, _, d2) = self.perturbation(pt(x1, x2));
            (x2 / l2 + v - y[1], 1.0 / l2 + d2)
        };
        if f(guess).0 == 0.0 {
            return Ok(pt(x1, guess));
        }
        let slack = 1e-12 * (y[1].abs() + cap);
        let a = l2 * (y[1] - cap - slack);
        let b = l2 * (y[1] + slack);
        let x2 = solve_bracketed(f, a, b, guess, self.root_tolerance).map_err(|(residual, iterations)| MapError::RootFinding {
            y1: y[0],
            y2: y[1],
            residual,
            iterations,
        })?;
        Ok(pt(x1, x2))
    }
}

impl PlanarMap for SiegelCounterexample {
    fn eval(&self, y: Point) -> Result<Point, MapError> {
        self.solve(y)
    }

    fn jacobian(&self, y: Point) -> Result<Mat2, MapError> {
        Ok(self.eval_with_jacobian(y)?.1)
    }

    fn eval_with_jacobian(&self, y: Point) -> Result<(Point, Mat2), MapError> {
        let x = self.solve(y)?;
        let j = inverse(&self.g_jacobian(x)).ok_or(MapError::Singular { x1: x[0], x2: x[1] })?;
        Ok((x, j))
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn inverse(&self, y: Point) -> Result<Point, MapError> {
        Ok(self.g(y))
    }

    fn inverse_with_jacobian(&self, y: Point) -> Result<(Point, Mat2), MapError> {
        Ok((self.g(y), self.g_jacobian(y)))
    }

    fn linear_part(&self) -> (f64, f64) {
        (self.params.lambda1, self.params.lambda2)
    }

    fn axis_invariance(&self) -> AxisInvariance {
        AxisInvariance::BOTH
    }

    fn support_radius(&self) -> Option<f64> {
        let SpectralParams { lambda1: l1, lambda2: l2, alpha } = self.params;
        let r = self.profile.outer_radius;
        Some((r / l1.abs()).max(r / l2.abs() + p_alpha(r / l1.abs(), alpha)))
    }

    fn trust_radius(&self) -> f64 {
        10.0 * self.support_radius().unwrap_or(self.profile.outer_radius)
    }

    fn nonlinearity_bound(&self) -> Option<f64> {
        self.profile.eta_bound
    }

    fn holder_exponent(&self) -> Option<f64> {
        Some(self.params.alpha)
    }

    fn label(&self) -> String {
        format!("siegel-counterexample({}, {}, alpha={})", self.params.lambda1, self.params.lambda2, self.params.alpha)
    }
}

type PointFn = dyn Fn(Point) -> Point + Send + Sync;
type MatFn = dyn Fn(Point) -> Mat2 + Send + Sync;

/// User-supplied map from closures; the Jacobian falls back to central differences.
pub struct FnMap {
    lambda: (f64, f64),
    eval: Box<PointFn>,
    jacobian: Option<Box<MatFn>>,
    inverse: Option<Box<PointFn>>,
    invariance: AxisInvariance,
    support: Option<f64>,
    name: String,
}

impl FnMap {
    pub fn new(lambda1: f64, lambda2: f64, eval: impl Fn(Point) -> Point + Send + Sync + 'static) -> Self {
        Self {
            lambda: (lambda1, lambda2),
            eval: Box::new(eval),
            jacobian: None,
            inverse: None,
            invariance: AxisInvariance::NONE,
            support: None,
            name: "user-map".into(),
        }
    }

    pub fn with_jacobian(mut self, j: impl Fn(Point) -> Mat2 + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Box::new(j));
        self
    }

    pub fn with_inverse(mut self, inv: impl Fn(Point) -> Point + Send + Sync + 'static) -> Self {
        self.inverse = Some(Box::new(inv));
        self
    }

    pub fn with_axis_invariance(mut self, inv: AxisInvariance) -> Self {
        self.invariance = inv;
        self
    }

    pub fn with_support_radius(mut self, r: f64) -> Self {
        self.support = Some(r);
        self
    }

    pub fn with_label(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl PlanarMap for FnMap {
    fn eval(&self, x: Point) -> Result<Point, MapError> {
        Ok((self.eval)(x))
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        match &self.jacobian {
            Some(j) => Ok(j(x)),
            None => finite_difference_jacobian(self, x, 1e-6),
        }
    }
    fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }
    fn inverse(&self, y: Point) -> Result<Point, MapError> {
        self.inverse.as_ref().map(|f| f(y)).ok_or(MapError::NoInverse)
    }
    fn linear_part(&self) -> (f64, f64) {
        self.lambda
    }
    fn axis_invariance(&self) -> AxisInvariance {
        self.invariance
    }
    fn support_radius(&self) -> Option<f64> {
        self.support
    }
    fn label(&self) -> String {
        self.name.clone()
    }
}

// ---------------------------------------------------------------------------
// Coordinate changes and conjugated maps

/// An invertible change of coordinates `T` with `T(O) = O`.
pub trait CoordinateChange: Send + Sync {
    fn forward(&self, x: Point) -> Result<Point, MapError>;
    fn backward(&self, y: Point) -> Result<Point, MapError>;
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError>;
    fn is_identity(&self) -> bool {
        false
    }
    fn label(&self) -> String;
}

pub type ChangeRef = Arc<dyn CoordinateChange>;

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityChange;

impl CoordinateChange for IdentityChange {
    fn forward(&self, x: Point) -> Result<Point, MapError> {
        Ok(x)
    }
    fn backward(&self, y: Point) -> Result<Point, MapError> {
        Ok(y)
    }
    fn jacobian(&self, _x: Point) -> Result<Mat2, MapError> {
        Ok(Mat2::identity())
    }
    fn is_identity(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        "identity".into()
    }
}

/// Coordinate change from closures.
pub struct FnChange {
    forward: Box<PointFn>,
    backward: Box<PointFn>,
    jacobian: Box<MatFn>,
    name: String,
}

impl FnChange {
    pub fn new(
        forward: impl Fn(Point) -> Point + Send + Sync + 'static,
        backward: impl Fn(Point) -> Point + Send + Sync + 'static,
        jacobian: impl Fn(Point) -> Mat2 + Send + Sync + 'static,
        name: impl Into<String>,
    ) -> Self {
        Self { forward: Box::new(forward), backward: Box::new(backward), jacobian: Box::new(jacobian), name: name.into() }
    }
}

impl CoordinateChange for FnChange {
    fn forward(&self, x: Point) -> Result<Point, MapError> {
        Ok((self.forward)(x))
    }
    fn backward(&self, y: Point) -> Result<Point, MapError> {
        Ok((self.backward)(y))
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        Ok((self.jacobian)(x))
    }
    fn label(&self) -> String {
        self.name.clone()
    }
}

/// `outer ∘ inner`.
pub struct ComposedChange {
    pub outer: ChangeRef,
    pub inner: ChangeRef,
}

impl CoordinateChange for ComposedChange {
    fn forward(&self, x: Point) -> Result<Point, MapError> {
        self.outer.forward(self.inner.forward(x)?)
    }
    fn backward(&self, y: Point) -> Result<Point, MapError> {
        self.inner.backward(self.outer.backward(y)?)
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        let y = self.inner.forward(x)?;
        Ok(self.outer.jacobian(y)? * self.inner.jacobian(x)?)
    }
    fn is_identity(&self) -> bool {
        self.outer.is_identity() && self.inner.is_identity()
    }
    fn label(&self) -> String {
        format!("{} . {}", self.outer.label(), self.inner.label())
    }
}

/// Compactly supported change fixing both axes pointwise:
/// `T = T2 ∘ T1`, `T1(x) = (x1 + c1 b(x1) b(x2), x2)`, `T2(x) = (x1, x2 + c2 b(x1) b(x2))`,
/// with `b(s) = s ρ(s)` and `ρ` a smooth cutoff, 1 on `|s| ≤ inner` and 0 on `|s| ≥ outer`.
///
/// `DT(O) = id`, but `DT` differs from the identity along the axes, so conjugating a
/// flat map by `T` produces a map whose axis derivative is not `Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisShear {
    pub c1: f64,
    pub c2: f64,
    pub inner: f64,
    pub outer: f64,
}

impl AxisShear {
    pub fn new(c1: f64, c2: f64, inner: f64, outer: f64) -> Result<Self, MapError> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(MapError::InvalidProfile { inner, outer });
        }
        let t = Self { c1, c2, inner, outer };
        let (bmax, dmax) = (0..=1000).fold((0.0f64, 0.0f64), |(m, d), k| {
            let s = outer * k as f64 / 1000.0;
            (m.max(t.b(s).abs()), d.max(t.db(s).abs()))
        });
        let amplitude = c1.abs().max(c2.abs());
        if amplitude * bmax * dmax >= 0.5 {
            return Err(MapError::InvalidShear { amplitude, limit: 0.5 / (bmax * dmax) });
        }
        Ok(t)
    }

    fn rho(&self, s: f64) -> f64 {
        smooth_step((self.outer - s.abs()) / (self.outer - self.inner))
    }

    fn b(&self, s: f64) -> f64 {
        s * self.rho(s)
    }

    fn db(&self, s: f64) -> f64 {
        let w = self.outer - self.inner;
        self.rho(s) - s.abs() * smooth_step_prime((self.outer - s.abs()) / w) / w
    }

    /// Solves `x + k b(x) = y` for `x`; the map is monotone by construction.
    fn solve(&self, k: f64, y: f64) -> Result<f64, MapError> {
        if k == 0.0 {
            return Ok(y);
        }
        let m = k.abs() * self.outer + 1e-300;
        solve_bracketed(|x| (x + k * self.b(x) - y, 1.0 + k * self.db(x)), y - 2.0 * m, y + 2.0 * m, y, 1e-16)
            .map_err(|(residual, iterations)| MapError::RootFinding { y1: y, y2: k, residual, iterations })
    }
}

impl CoordinateChange for AxisShear {
    fn forward(&self, x: Point) -> Result<Point, MapError> {
        let w1 = x[0] + self.c1 * self.b(x[0]) * self.b(x[1]);
        Ok(pt(w1, x[1] + self.c2 * self.b(w1) * self.b(x[1])))
    }
    fn backward(&self, y: Point) -> Result<Point, MapError> {
        let x2 = self.solve(self.c2 * self.b(y[0]), y[1])?;
        let x1 = self.solve(self.c1 * self.b(x2), y[0])?;
        Ok(pt(x1, x2))
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        let (b1, b2, d1, d2) = (self.b(x[0]), self.b(x[1]), self.db(x[0]), self.db(x[1]));
        let j1 = Mat2::new(1.0 + self.c1 * d1 * b2, self.c1 * b1 * d2, 0.0, 1.0);
        let w1 = x[0] + self.c1 * b1 * b2;
        let j2 = Mat2::new(1.0, 0.0, self.c2 * self.db(w1) * b2, 1.0 + self.c2 * self.b(w1) * d2);
        Ok(j2 * j1)
    }
    fn label(&self) -> String {
        format!("axis-shear(c1={}, c2={}, rho {}..{})", self.c1, self.c2, self.inner, self.outer)
    }
}

/// `T ∘ F ∘ T^{-1}`.
pub struct ConjugatedMap {
    inner: MapRef,
    change: ChangeRef,
    invariance: AxisInvariance,
    support: Option<f64>,
}

impl ConjugatedMap {
    pub fn new(inner: MapRef, change: ChangeRef) -> Self {
        Self { inner, change, invariance: AxisInvariance::NONE, support: None }
    }

    pub fn with_axis_invariance(mut self, inv: AxisInvariance) -> Self {
        self.invariance = inv;
        self
    }

    pub fn with_support_radius(mut self, r: Option<f64>) -> Self {
        self.support = r;
        self
    }

    pub fn change(&self) -> &ChangeRef {
        &self.change
    }

    pub fn inner(&self) -> &MapRef {
        &self.inner
    }
}

impl PlanarMap for ConjugatedMap {
    fn eval(&self, y: Point) -> Result<Point, MapError> {
        let x = self.change.backward(y)?;
        self.change.forward(self.inner.eval(x)?)
    }

    fn jacobian(&self, y: Point) -> Result<Mat2, MapError> {
        Ok(self.eval_with_jacobian(y)?.1)
    }

    fn eval_with_jacobian(&self, y: Point) -> Result<(Point, Mat2), MapError> {
        let x = self.change.backward(y)?;
        let (fx, df) = self.inner.eval_with_jacobian(x)?;
        let dt_in = self.change.jacobian(x)?;
        let dt_inv = inverse(&dt_in).ok_or(MapError::Singular { x1: x[0], x2: x[1] })?;
        let out = self.change.forward(fx)?;
        Ok((out, self.change.jacobian(fx)? * df * dt_inv))
    }

    fn has_inverse(&self) -> bool {
        self.inner.has_inverse()
    }

    fn inverse(&self, w: Point) -> Result<Point, MapError> {
        let z = self.change.backward(w)?;
        self.change.forward(self.inner.inverse(z)?)
    }

    fn inverse_with_jacobian(&self, w: Point) -> Result<(Point, Mat2), MapError> {
        let z = self.change.backward(w)?;
        let (x, dinv) = self.inner.inverse_with_jacobian(z)?;
        let dt_z = self.change.jacobian(z)?;
        let dt_z_inv = inverse(&dt_z).ok_or(MapError::Singular { x1: z[0], x2: z[1] })?;
        Ok((self.change.forward(x)?, self.change.jacobian(x)? * dinv * dt_z_inv))
    }

    fn linear_part(&self) -> (f64, f64) {
        self.inner.linear_part()
    }

    fn axis_invariance(&self) -> AxisInvariance {
        self.invariance
    }

    fn support_radius(&self) -> Option<f64> {
        self.support
    }

    fn trust_radius(&self) -> f64 {
        self.inner.trust_radius()
    }

    fn holder_exponent(&self) -> Option<f64> {
        self.inner.holder_exponent()
    }

    fn label(&self) -> String {
        format!("({}) conjugated by ({})", self.inner.label(), self.change.label())
    }
}

/// `S ∘ F ∘ S` with `S(x1, x2) = (x2, x1)`.
pub struct SwappedMap {
    inner: MapRef,
}

impl SwappedMap {
    pub fn new(inner: MapRef) -> Self {
        Self { inner }
    }
}

fn swap(x: Point) -> Point {
    pt(x[1], x[0])
}

fn swap_mat(m: Mat2) -> Mat2 {
    Mat2::new(m[(1, 1)], m[(1, 0)], m[(0, 1)], m[(0, 0)])
}

impl PlanarMap for SwappedMap {
    fn eval(&self, x: Point) -> Result<Point, MapError> {
        Ok(swap(self.inner.eval(swap(x))?))
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        Ok(swap_mat(self.inner.jacobian(swap(x))?))
    }
    fn eval_with_jacobian(&self, x: Point) -> Result<(Point, Mat2), MapError> {
        let (y, j) = self.inner.eval_with_jacobian(swap(x))?;
        Ok((swap(y), swap_mat(j)))
    }
    fn has_inverse(&self) -> bool {
        self.inner.has_inverse()
    }
    fn inverse(&self, y: Point) -> Result<Point, MapError> {
        Ok(swap(self.inner.inverse(swap(y))?))
    }
    fn inverse_with_jacobian(&self, y: Point) -> Result<(Point, Mat2), MapError> {
        let (x, j) = self.inner.inverse_with_jacobian(swap(y))?;
        Ok((swap(x), swap_mat(j)))
    }
    fn linear_part(&self) -> (f64, f64) {
        let (a, b) = self.inner.linear_part();
        (b, a)
    }
    fn axis_invariance(&self) -> AxisInvariance {
        let a = self.inner.axis_invariance();
        AxisInvariance { x1_axis: a.x2_axis, x2_axis: a.x1_axis }
    }
    fn support_radius(&self) -> Option<f64> {
        self.inner.support_radius()
    }
    fn trust_radius(&self) -> f64 {
        self.inner.trust_radius()
    }
    fn nonlinearity_bound(&self) -> Option<f64> {
        self.inner.nonlinearity_bound()
    }
    fn holder_exponent(&self) -> Option<f64> {
        self.inner.holder_exponent()
    }
    fn label(&self) -> String {
        format!("swap({})", self.inner.label())
    }
}

/// `F^{-1}` as a map in its own right.
pub struct InverseMap {
    inner: MapRef,
}

impl InverseMap {
    pub fn new(inner: MapRef) -> Result<Self, MapError> {
        if !inner.has_inverse() {
            return Err(MapError::NoInverse);
        }
        Ok(Self { inner })
    }
}

impl PlanarMap for InverseMap {
    fn eval(&self, x: Point) -> Result<Point, MapError> {
        self.inner.inverse(x)
    }
    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        self.inner.inverse_jacobian(x)
    }
    fn eval_with_jacobian(&self, x: Point) -> Result<(Point, Mat2), MapError> {
        self.inner.inverse_with_jacobian(x)
    }
    fn has_inverse(&self) -> bool {
        true
    }
    fn inverse(&self, y: Point) -> Result<Point, MapError> {
        self.inner.eval(y)
    }
    fn inverse_with_jacobian(&self, y: Point) -> Result<(Point, Mat2), MapError> {
        self.inner.eval_with_jacobian(y)
    }
    fn linear_part(&self) -> (f64, f64) {
        let (a, b) = self.inner.linear_part();
        (1.0 / a, 1.0 / b)
    }
    fn axis_invariance(&self) -> AxisInvariance {
        self.inner.axis_invariance()
    }
    fn support_radius(&self) -> Option<f64> {
        self.inner.support_radius()
    }
    fn trust_radius(&self) -> f64 {
        self.inner.trust_radius()
    }
    fn holder_exponent(&self) -> Option<f64> {
        self.inner.holder_exponent()
    }
    fn label(&self) -> String {
        format!("inverse({})", self.inner.label())
    }
}

// ---------------------------------------------------------------------------
// Iteration

/// `F^n(x)` for signed `n` together with the chain-rule Jacobian.
pub fn iterate_with_jacobian(map: &dyn PlanarMap, x: Point, n: i64) -> Result<(Point, Mat2), MapError> {
    let radius = map.trust_radius();
    let mut z = x;
    let mut j = Mat2::identity();
    for step in 1..=n.unsigned_abs() as usize {
        let (next, d) = if n > 0 { map.eval_with_jacobian(z)? } else { map.inverse_with_jacobian(z)? };
        z = next;
        j = d * j;
        let r = norm(&z);
        if !(r <= radius) {
            return Err(MapError::Escape { step, norm: r, radius });
        }
    }
    Ok((z, j))
}

pub fn iterate(map: &dyn PlanarMap, x: Point, n: i64) -> Result<Point, MapError> {
    let radius = map.trust_radius();
    let mut z = x;
    for step in 1..=n.unsigned_abs() as usize {
        z = if n > 0 { map.eval(z)? } else { map.inverse(z)? };
        let r = norm(&z);
        if !(r <= radius) {
            return Err(MapError::Escape { step, norm: r, radius });
        }
    }
    Ok(z)
}

pub fn jacobian_of_iterate(map: &dyn PlanarMap, x: Point, n: i64) -> Result<Mat2, MapError> {
    Ok(iterate_with_jacobian(map, x, n)?.1)
}

/// Central-difference Jacobian with step `h`.
pub fn finite_difference_jacobian(map: &dyn PlanarMap, x: Point, h: f64) -> Result<Mat2, MapError> {
    let mut m = Mat2::zeros();
    for c in 0..2 {
        let mut e = Point::zeros();
        e[c] = h;
        let d = (map.eval(x + e)? - map.eval(x - e)?) / (2.0 * h);
        m[(0, c)] = d[0];
        m[(1, c)] = d[1];
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianCheck {
    pub analytic: Mat2,
    pub numeric: Mat2,
    pub discrepancy: f64,
    /// Discrepancy beyond tolerance: the stencil straddles a non-smooth set
    /// (the switching cone of `u` or the kink of `p_alpha`).
    pub flagged: bool,
}

pub fn jacobian_check(map: &dyn PlanarMap, x: Point, h: f64, tol: f64) -> Result<JacobianCheck, MapError> {
    let analytic = map.jacobian(x)?;
    let numeric = finite_difference_jacobian(map, x, h)?;
    let discrepancy = (analytic - numeric).amax();
    Ok(JacobianCheck { analytic, numeric, discrepancy, flagged: discrepancy > tol })
}

/// Sup of `||DF(x) - Lambda||` over an `n x n` grid on `[-radius, radius]^2`.
pub fn measure_eta(map: &dyn PlanarMap, radius: f64, n: usize) -> Result<f64, MapError> {
    let lam = map.lambda();
    let mut eta: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = pt(
                -radius + 2.0 * radius * i as f64 / (n - 1) as f64,
                -radius + 2.0 * radius * j as f64 / (n - 1) as f64,
            );
            eta = eta.max(op_norm(&(map.jacobian(x)? - lam)));
        }
    }
    Ok(eta)
}

/// Max of `||DF(x) - DF(y)|| / ||x - y||^alpha` over seeded random pairs in `[-radius, radius]^2`.
pub fn measure_jacobian_holder(map: &dyn PlanarMap, radius: f64, alpha: f64, pairs: usize, seed: u64) -> Result<f64, MapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let x = pt(rng.random_range(-radius..=radius), rng.random_range(-radius..=radius));
        let scale = radius * 10f64.powf(-rng.random_range(0.0..4.0));
        let y = x + pt(rng.random_range(-scale..=scale), rng.random_range(-scale..=scale));
        let d = norm(&(x - y));
        if d == 0.0 {
            continue;
        }
        let q = op_norm(&(map.jacobian(x)? - map.jacobian(y)?)) / d.powf(alpha);
        best = best.max(q);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fstar(l1: f64, l2: f64, alpha: f64) -> PoincareCounterexample {
        make_poincare_counterexample(SpectralParams::new(l1, l2, alpha), BumpProfile::default()).unwrap()
    }

    fn gstar(l1: f64, l2: f64, alpha: f64) -> SiegelCounterexample {
        make_siegel_counterexample(SpectralParams::new(l1, l2, alpha), BumpProfile::default()).unwrap()
    }

    #[test]
    fn axis_shear_fixes_axes_and_inverts() {
        let t = AxisShear::new(1.5, -1.0, 0.1, 0.2).unwrap();
        for s in [-0.3, -0.15, -0.01, 0.0, 0.07, 0.19] {
            assert_eq!(t.forward(pt(s, 0.0)).unwrap(), pt(s, 0.0));
            assert_eq!(t.forward(pt(0.0, s)).unwrap(), pt(0.0, s));
        }
        for x in [pt(0.05, -0.08), pt(-0.13, 0.11), pt(0.3, 0.02)] {
            let y = t.forward(x).unwrap();
            assert!(norm(&(t.backward(y).unwrap() - x)) < 1e-15);
            let h = 1e-6;
            let fd = |e: Point| (t.forward(x + e * h).unwrap() - t.forward(x - e * h).unwrap()) / (2.0 * h);
            let j = t.jacobian(x).unwrap();
            let (c0, c1) = (fd(pt(1.0, 0.0)), fd(pt(0.0, 1.0)));
            assert!(op_norm(&(j - Mat2::new(c0[0], c1[0], c0[1], c1[1]))) < 1e-8);
        }
        assert_eq!(t.jacobian(pt(0.0, 0.0)).unwrap(), Mat2::identity());
        assert!(AxisShear::new(100.0, 0.0, 0.1, 0.2).is_err());
    }

    #[test]
    fn p_alpha_values() {
        assert_eq!(p_alpha(2.0, 1.0), 4.0);
        assert_eq!(p_alpha(0.0, 0.5), 0.0);
        assert_eq!(p_alpha(-1.0, 0.5), 0.0);
        let h = 1e-10;
        for alpha in [0.9, 1.0] {
            let fd = (p_alpha(h, alpha) - p_alpha(-h, alpha)) / (2.0 * h);
            assert!(fd.abs() < 1e-8);
        }
    }

    #[test]
    fn u_switch_values() {
        assert_eq!(u(1.0, 0.5).unwrap(), 1.0);
        assert_eq!(u(-0.1, 1.0).unwrap(), 0.0);
        assert_eq!(u(0.3, 0.0).unwrap(), 1.0);
        assert_eq!(u(0.0, 0.0), Err(MapError::DomainAtOrigin));
        let v = u(0.5, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-14, "q is symmetric about 1/2, got {v}");
    }

    #[test]
    fn bump_values() {
        let p = BumpProfile::default();
        assert_eq!(bump(Point::zeros(), &p), 1.0);
        assert_eq!(bump(pt(0.4, 0.0), &p), 0.0);
        let mid = bump(pt(0.15, 0.0), &p);
        assert!(mid > 0.0 && mid < 1.0);
        assert!((mid - 0.5).abs() < 1e-14);
        let g = bump_gradient(pt(0.15, 0.0), &p);
        let h = 1e-6;
        let fd = (bump(pt(0.15 + h, 0.0), &p) - bump(pt(0.15 - h, 0.0), &p)) / (2.0 * h);
        assert!((g[0] - fd).abs() < 1e-6);
    }

    #[test]
    fn fstar_axes_and_quadrants() {
        let f = fstar(0.25, 0.5, 0.4);
        assert_eq!(f.eval(pt(0.07, 0.0)).unwrap(), pt(0.25 * 0.07, 0.0));
        assert_eq!(f.eval(pt(0.0, -0.03)).unwrap(), pt(0.0, -0.015));
        assert_eq!(f.eval(pt(0.0, 0.03)).unwrap(), pt(0.0, 0.015));
        assert_eq!(f.eval(pt(-0.02, 0.05)).unwrap(), pt(-0.005, 0.025));
        assert_eq!(f.eval(Point::zeros()).unwrap(), Point::zeros());
        assert_eq!(f.jacobian(Point::zeros()).unwrap(), diag(0.25, 0.5));
    }

    #[test]
    fn fstar_analytic_jacobian_matches_differences() {
        let f = fstar(0.25, 0.5, 0.4);
        for &x in &[pt(0.03, 0.05), pt(0.02, 0.011), pt(0.12, 0.08)] {
            let c = jacobian_check(&f, x, 1e-5, 1e-6).unwrap();
            assert!(!c.flagged, "{x:?}: {}", c.discrepancy);
        }
        let c = jacobian_check(&f, pt(0.05, 1e-7), 1e-5, 1e-6).unwrap();
        assert!(c.flagged);
    }

    #[test]
    fn fstar_inverse_round_trip() {
        let f = fstar(0.2, 0.5, 0.9);
        for &x in &[pt(0.03, 0.05), pt(0.001, 0.08), pt(-0.02, 0.01)] {
            let y = f.eval(x).unwrap();
            assert!(norm(&(f.inverse(y).unwrap() - x)) < 1e-14);
        }
    }

    #[test]
    fn gstar_round_trip_and_linear_part() {
        let g = gstar(0.5, 2.0, 1.0);
        assert_eq!(g.eval(Point::zeros()).unwrap(), Point::zeros());
        assert_eq!(g.jacobian(Point::zeros()).unwrap(), diag(0.5, 2.0));
        let mut worst: f64 = 0.0;
        for i in 0..41 {
            for j in 0..41 {
                let y = pt(-0.2 + 0.01 * i as f64, -0.2 + 0.01 * j as f64);
                worst = worst.max(norm(&(g.g(g.eval(y).unwrap()) - y)));
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn gstar_on_first_axis_is_linear() {
        let g = gstar(0.5, 2.0, 1.0);
        for s in [-0.1, 0.01, 0.05, 0.15] {
            assert_eq!(g.eval(pt(s, 0.0)).unwrap(), pt(0.5 * s, 0.0));
        }
    }

    #[test]
    fn iteration_basics() {
        let l = LinearMap::new(0.5, 2.0);
        let x = pt(0.1, 0.01);
        assert_eq!(iterate(&l, x, 0).unwrap(), x);
        assert_eq!(jacobian_of_iterate(&l, x, 0).unwrap(), Mat2::identity());
        assert_eq!(iterate(&l, x, 3).unwrap(), pt(0.0125, 0.08));
        assert_eq!(iterate(&l, x, -2).unwrap(), pt(0.4, 0.0025));
        let f = fstar(0.25, 0.5, 0.4);
        assert!(matches!(iterate(&f, pt(0.1, 0.1), -1), Ok(_)));
        let j = jacobian_of_iterate(&f, Point::zeros(), 5).unwrap();
        assert_eq!(j, diag(0.25f64.powi(5), 0.5f64.powi(5)));
        let g = gstar(0.5, 2.0, 1.0);
        assert!(matches!(iterate(&g, pt(0.0, 0.1), 10), Err(MapError::Escape { step: 6, .. })));
    }

    #[test]
    fn kernel_normalization_is_stable() {
        let coarse = SmoothingKernel::new(1e-10);
        let fine = kernel();
        assert!((coarse.normalization() - fine.normalization()).abs() < 1e-12);
    }

    #[test]
    fn wrong_domain_is_rejected() {
        let err = make_poincare_counterexample(SpectralParams::new(0.5, 2.0, 1.0), BumpProfile::default()).unwrap_err();
        assert!(matches!(err, MapError::InvalidDomain { .. }));
        let err = make_siegel_counterexample(SpectralParams::new(0.25, 0.5, 1.0), BumpProfile::default()).unwrap_err();
        assert!(matches!(err, MapError::InvalidDomain { .. }));
    }
}
