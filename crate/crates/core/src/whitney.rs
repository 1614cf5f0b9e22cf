//! First-order jets on the coordinate cross and their Whitney extension to the plane.
//!
//! The cross is `Ω = (I1 × {0}) ∪ ({0} × I2)`. A jet assigns to each point of `Ω` a value
//! `h00` and a gradient `(h10, h01)`. The extension uses the dyadic Whitney
//! decomposition of the complement of `Ω` in the max-norm: the maximal dyadic squares
//! with side at most a quarter of their distance to `Ω`. Each square carries a smooth
//! bump equal to 1 on the square and supported in the square inflated by `9/8`; the
//! normalized bumps weight the first-order Taylor polynomials anchored at the point of
//! `Ω` nearest to each square's centre.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funceq::AxisJets;
use crate::grid::{AxisGrid, Grid2D, ScalarField2D, VectorField2D};
use crate::linalg::{diag, inverse, op_norm, pt, Mat2, Point};
use crate::maps::{smooth_step, smooth_step_prime, CoordinateChange, MapError, MapRef, PlanarMap};
use crate::quadrature::cumulative_simpson;

#[derive(Debug, Error)]
pub enum WhitneyError {
    #[error("jet normalization violated: {0}")]
    Normalization(String),
    #[error("jet branches disagree at the origin by {0:e}")]
    OriginMismatch(f64),
    #[error("axis grid must contain 0 as a node")]
    NoOriginNode,
    #[error("axis verification failed: residual {residual:e} exceeds {tolerance:e}")]
    Verification { residual: f64, tolerance: f64 },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Jet samples along one axis of the cross.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisJetBranch {
    pub grid: AxisGrid,
    pub h00: Vec<f64>,
    pub h10: Vec<f64>,
    pub h01: Vec<f64>,
}

impl AxisJetBranch {
    pub fn new(grid: AxisGrid, h00: Vec<f64>, h10: Vec<f64>, h01: Vec<f64>) -> Self {
        assert!(h00.len() == grid.n && h10.len() == grid.n && h01.len() == grid.n, "jet length does not match grid");
        Self { grid, h00, h10, h01 }
    }

    pub fn zero(grid: AxisGrid) -> Self {
        Self::new(grid, vec![0.0; grid.n], vec![0.0; grid.n], vec![0.0; grid.n])
    }

    fn node_jet(&self, i: usize) -> [f64; 3] {
        [self.h00[i], self.h10[i], self.h01[i]]
    }
}

/// Position on the cross: a coordinate along one of the two axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrossPoint {
    X1(f64),
    X2(f64),
}

impl CrossPoint {
    pub fn point(self) -> Point {
        match self {
            CrossPoint::X1(s) => pt(s, 0.0),
            CrossPoint::X2(s) => pt(0.0, s),
        }
    }
}

/// A first-order jet on the cross.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetOnCross {
    pub x1_axis: AxisJetBranch,
    pub x2_axis: AxisJetBranch,
    pub alpha: f64,
}

impl JetOnCross {
    pub fn new(x1_axis: AxisJetBranch, x2_axis: AxisJetBranch, alpha: f64) -> Result<Self, WhitneyError> {
        let (Some(i), Some(j)) = (x1_axis.grid.zero_index(), x2_axis.grid.zero_index()) else {
            return Err(WhitneyError::NoOriginNode);
        };
        let a = x1_axis.node_jet(i);
        let b = x2_axis.node_jet(j);
        let gap = a.iter().zip(&b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        if gap > 1e-12 {
            return Err(WhitneyError::OriginMismatch(gap));
        }
        Ok(Self { x1_axis, x2_axis, alpha })
    }

    /// Jet of a function given by value and gradient closures, restricted to the cross.
    pub fn restrict(
        grid1: AxisGrid,
        grid2: AxisGrid,
        alpha: f64,
        h: impl Fn(Point) -> f64,
        grad: impl Fn(Point) -> Point,
    ) -> Result<Self, WhitneyError> {
        let branch = |g: AxisGrid, at: &dyn Fn(f64) -> Point| {
            let pts: Vec<Point> = g.nodes().into_iter().map(at).collect();
            AxisJetBranch::new(
                g,
                pts.iter().map(|&p| h(p)).collect(),
                pts.iter().map(|&p| grad(p)[0]).collect(),
                pts.iter().map(|&p| grad(p)[1]).collect(),
            )
        };
        Self::new(branch(grid1, &|s| pt(s, 0.0)), branch(grid2, &|s| pt(0.0, s)), alpha)
    }

    /// Jet `[h00, h10, h01]` at a cross point.
    ///
    /// Between nodes the gradient is interpolated linearly and the value is the nodal
    /// value plus the exact integral of the interpolated tangential derivative.
    pub fn at(&self, p: CrossPoint) -> [f64; 3] {
        let (b, s, tangential) = match p {
            CrossPoint::X1(s) => (&self.x1_axis, s, 1),
            CrossPoint::X2(s) => (&self.x2_axis, s, 2),
        };
        let g = &b.grid;
        let s = s.clamp(g.min, g.max);
        let h = g.step();
        let u = (s - g.min) / h;
        let i = (u.floor() as usize).min(g.n - 2);
        let t = (u - i as f64).clamp(0.0, 1.0);
        if t == 0.0 {
            return b.node_jet(i);
        }
        let lerp = |v: &[f64]| v[i] + (v[i + 1] - v[i]) * t;
        let d: &[f64] = if tangential == 1 { &b.h10 } else { &b.h01 };
        let value = b.h00[i] + h * (t * d[i] + 0.5 * t * t * (d[i + 1] - d[i]));
        [value, lerp(&b.h10), lerp(&b.h01)]
    }

    /// Point of the cross nearest to `x` in the max-norm, ties going to the `x1`-axis.
    pub fn nearest(&self, x: Point) -> CrossPoint {
        let g1 = &self.x1_axis.grid;
        let g2 = &self.x2_axis.grid;
        let s1 = x[0].clamp(g1.min, g1.max);
        let s2 = x[1].clamp(g2.min, g2.max);
        let d1 = (x[0] - s1).abs().max(x[1].abs());
        let d2 = x[0].abs().max((x[1] - s2).abs());
        if d1 <= d2 {
            CrossPoint::X1(s1)
        } else {
            CrossPoint::X2(s2)
        }
    }

    /// `x` as a cross point when it lies on `Ω`.
    pub fn on_cross(&self, x: Point) -> Option<CrossPoint> {
        if x[1] == 0.0 && self.x1_axis.grid.contains(x[0]) {
            Some(CrossPoint::X1(x[0]))
        } else if x[0] == 0.0 && self.x2_axis.grid.contains(x[1]) {
            Some(CrossPoint::X2(x[1]))
        } else {
            None
        }
    }

    /// Max-norm distance from the square `[a1, b1] × [a2, b2]` to `Ω`.
    fn square_distance(&self, a: Point, b: Point) -> f64 {
        let gap = |lo: f64, hi: f64, min: f64, max: f64| (min - hi).max(lo - max).max(0.0);
        let g1 = &self.x1_axis.grid;
        let g2 = &self.x2_axis.grid;
        let d1 = gap(a[0], b[0], g1.min, g1.max).max(gap(a[1], b[1], 0.0, 0.0));
        let d2 = gap(a[0], b[0], 0.0, 0.0).max(gap(a[1], b[1], g2.min, g2.max));
        d1.min(d2)
    }

    pub fn distance(&self, x: Point) -> f64 {
        self.square_distance(x, x)
    }

    /// `∫_b^a (d(s) - d(b)) ds` for the interpolated tangential derivative `d` of one
    /// branch, summed cell by cell so that no large values cancel.
    fn branch_remainder(b: &AxisJetBranch, tangential: usize, a: f64, from: f64) -> f64 {
        let g = &b.grid;
        let d: &[f64] = if tangential == 1 { &b.h10 } else { &b.h01 };
        let h = g.step();
        let deriv = |s: f64| {
            let u = ((s - g.min) / h).clamp(0.0, (g.n - 1) as f64);
            let i = (u.floor() as usize).min(g.n - 2);
            d[i] + (d[i + 1] - d[i]) * (u - i as f64)
        };
        let (lo, hi, sign) = if a >= from { (from, a, 1.0) } else { (a, from, -1.0) };
        let lo = lo.clamp(g.min, g.max);
        let hi = hi.clamp(g.min, g.max);
        let base = deriv(from.clamp(g.min, g.max));
        let mut total = 0.0;
        let mut u = lo;
        while u < hi {
            let k = ((u - g.min) / h).floor() as usize + 1;
            let mut v = g.node(k.min(g.n - 1));
            if v <= u {
                v = g.node((k + 1).min(g.n - 1));
            }
            let v = v.min(hi);
            if v <= u {
                break;
            }
            total += (v - u) * (0.5 * (deriv(u) + deriv(v)) - base);
            u = v;
        }
        sign * total
    }

    /// `R00(p, q) = h00(p) - h00(q) - ∇h(q)·(p - q)` without forming `h00(p) - h00(q)`.
    pub fn value_remainder(&self, p: CrossPoint, q: CrossPoint) -> f64 {
        match (p, q) {
            (CrossPoint::X1(a), CrossPoint::X1(b)) => Self::branch_remainder(&self.x1_axis, 1, a, b),
            (CrossPoint::X2(a), CrossPoint::X2(b)) => Self::branch_remainder(&self.x2_axis, 2, a, b),
            _ => {
                let o = match p {
                    CrossPoint::X1(_) => CrossPoint::X1(0.0),
                    CrossPoint::X2(_) => CrossPoint::X2(0.0),
                };
                let oq = match q {
                    CrossPoint::X1(_) => CrossPoint::X1(0.0),
                    CrossPoint::X2(_) => CrossPoint::X2(0.0),
                };
                let [_, g10, g01] = self.at(q);
                let [_, o10, o01] = self.at(oq);
                let d = p.point() - q.point();
                self.value_remainder(p, o) - self.value_remainder(q, oq) - (g10 - o10) * d[0] - (g01 - o01) * d[1]
            }
        }
    }

    /// Taylor polynomial anchored at `p`, evaluated at `x`: value and gradient.
    fn taylor(&self, p: CrossPoint, x: Point) -> (f64, Point) {
        let [h00, h10, h01] = self.at(p);
        let a = p.point();
        (h00 + h10 * (x[0] - a[0]) + h01 * (x[1] - a[1]), pt(h10, h01))
    }
}

/// Builds the jets of both components of `Ψ*` from the axis solutions.
///
/// First component: `h00 = ∫₀^{x1} p11`, `h10 = p11`, `h01 = p12` on the `x1`-axis and
/// `h00 = 0`, `h10 = q11`, `h01 = 0` on the `x2`-axis. Second component: `0, 0, p22`
/// on the `x1`-axis and `∫₀^{x2} q22`, `q21`, `q22` on the `x2`-axis.
pub fn jet_from_axis_data(jets: &AxisJets) -> Result<(JetOnCross, JetOnCross), WhitneyError> {
    jets.check_normalization(1e-9).map_err(|e| WhitneyError::Normalization(e.to_string()))?;
    let g1 = jets.p11.grid;
    let g2 = jets.q22.grid;
    let (Some(o1), Some(o2)) = (g1.zero_index(), g2.zero_index()) else {
        return Err(WhitneyError::NoOriginNode);
    };
    let same = |f: &crate::grid::AxisFunction, g: AxisGrid| f.grid == g;
    if !(same(&jets.p12, g1) && same(&jets.p22, g1) && same(&jets.q11, g2) && same(&jets.q21, g2)) {
        return Err(WhitneyError::Normalization("jets on one axis must share a grid".into()));
    }
    let int1 = cumulative_simpson(&jets.p11.values, g1.step(), o1);
    let int2 = cumulative_simpson(&jets.q22.values, g2.step(), o2);
    let zeros1 = vec![0.0; g1.n];
    let zeros2 = vec![0.0; g2.n];
    let first = JetOnCross::new(
        AxisJetBranch::new(g1, int1, jets.p11.values.clone(), jets.p12.values.clone()),
        AxisJetBranch::new(g2, zeros2.clone(), jets.q11.values.clone(), zeros2.clone()),
        jets.alpha,
    )?;
    let second = JetOnCross::new(
        AxisJetBranch::new(g1, zeros1.clone(), zeros1, jets.p22.values.clone()),
        AxisJetBranch::new(g2, int2, jets.q21.values.clone(), jets.q22.values.clone()),
        jets.alpha,
    )?;
    Ok((first, second))
}

/// Location of a sampled pair on the cross, numbered as in the compatibility proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairCase {
    /// Both points on the `x2`-axis.
    BothX2,
    /// `x` on the `x2`-axis, `y` on the `x1`-axis.
    X2ThenX1,
    /// `x` on the `x1`-axis, `y` on the `x2`-axis.
    X1ThenX2,
    /// Both points on the `x1`-axis.
    BothX1,
}

impl PairCase {
    pub const ALL: [PairCase; 4] = [PairCase::BothX2, PairCase::X2ThenX1, PairCase::X1ThenX2, PairCase::BothX1];
}

/// Largest remainder ratios seen for one pair case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseFit {
    pub case: PairCase,
    pub pairs: usize,
    /// Max of `|R00| / ||x-y||^{1+α}`.
    pub r00: f64,
    /// Max of `|R10| / ||x-y||^α`.
    pub r10: f64,
    /// Max of `|R01| / ||x-y||^α`.
    pub r01: f64,
}

impl CaseFit {
    pub fn constant(&self) -> f64 {
        self.r00.max(self.r10).max(self.r01)
    }

    pub fn is_finite(&self) -> bool {
        self.r00.is_finite() && self.r10.is_finite() && self.r01.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCheck {
    pub cases: Vec<CaseFit>,
}

impl WhitneyCheck {
    /// Fitted Whitney constant `M`: the largest ratio over all cases.
    pub fn constant(&self) -> f64 {
        self.cases.iter().map(CaseFit::constant).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.pairs > 0 && c.is_finite())
    }

    pub fn case(&self, case: PairCase) -> &CaseFit {
        self.cases.iter().find(|c| c.case == case).expect("all cases are present")
    }
}

/// Remainders `R00, R10, R01` of the jet between two cross nodes.
pub fn remainders(jet: &JetOnCross, x: CrossPoint, y: CrossPoint) -> [f64; 3] {
    let [_, a10, a01] = jet.at(x);
    let [_, b10, b01] = jet.at(y);
    [jet.value_remainder(x, y), a10 - b10, a01 - b01]
}

/// Samples `pair_budget` node pairs split evenly over the four cases and records the
/// largest remainder ratios. Pair separations are drawn log-uniformly in node units.
pub fn check_whitney_conditions(jet: &JetOnCross, pair_budget: usize, seed: u64) -> WhitneyCheck {
    let per_case = (pair_budget / 4).max(1);
    let alpha = jet.alpha;
    let cases = PairCase::ALL
        .par_iter()
        .enumerate()
        .map(|(k, &case)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut fit = CaseFit { case, pairs: 0, r00: 0.0, r10: 0.0, r01: 0.0 };
            let g1 = jet.x1_axis.grid;
            let g2 = jet.x2_axis.grid;
            let draw = |rng: &mut ChaCha8Rng, g: &AxisGrid| g.node(rng.random_range(0..g.n));
            let near = |rng: &mut ChaCha8Rng, g: &AxisGrid, s: f64| {
                let span = (g.n as f64).log2();
                let off = (2f64.powf(rng.random_range(0.0..span)).round()) * g.step();
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (s + sign * off).clamp(g.min, g.max)
            };
            let small = |rng: &mut ChaCha8Rng, g: &AxisGrid| {
                let span = (g.n as f64).log2() - 1.0;
                let k = 2f64.powf(rng.random_range(0.0..span)).round() as usize;
                let o = g.zero_index().unwrap_or(0);
                if rng.random_bool(0.5) {
                    g.node((o + k).min(g.n - 1))
                } else {
                    g.node(o.saturating_sub(k))
                }
            };
            let mut tries = 0;
            while fit.pairs < per_case && tries < 20 * per_case {
                tries += 1;
                let (x, y) = match case {
                    PairCase::BothX2 => {
                        let s = draw(&mut rng, &g2);
                        (CrossPoint::X2(near(&mut rng, &g2, s)), CrossPoint::X2(s))
                    }
                    PairCase::BothX1 => {
                        let s = draw(&mut rng, &g1);
                        (CrossPoint::X1(near(&mut rng, &g1, s)), CrossPoint::X1(s))
                    }
                    PairCase::X2ThenX1 => (CrossPoint::X2(small(&mut rng, &g2)), CrossPoint::X1(small(&mut rng, &g1))),
                    PairCase::X1ThenX2 => (CrossPoint::X1(small(&mut rng, &g1)), CrossPoint::X2(small(&mut rng, &g2))),
                };
                let d = (x.point() - y.point()).amax();
                if d == 0.0 {
                    continue;
                }
                let [r00, r10, r01] = remainders(jet, x, y);
                fit.r00 = fit.r00.max(r00.abs() / d.powf(1.0 + alpha));
                fit.r10 = fit.r10.max(r10.abs() / d.powf(alpha));
                fit.r01 = fit.r01.max(r01.abs() / d.powf(alpha));
                fit.pairs += 1;
            }
            fit
        })
        .collect();
    WhitneyCheck { cases }
}

/// A dyadic square `[i1, i1+1] × [i2, i2+1] · 2^level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubeId {
    pub level: i32,
    pub i1: i64,
    pub i2: i64,
}

impl CubeId {
    fn side(&self) -> f64 {
        2f64.powi(self.level)
    }

    fn corners(&self) -> (Point, Point) {
        let s = self.side();
        (pt(self.i1 as f64 * s, self.i2 as f64 * s), pt((self.i1 + 1) as f64 * s, (self.i2 + 1) as f64 * s))
    }

    fn center(&self) -> Point {
        let (a, b) = self.corners();
        (a + b) * 0.5
    }

    fn parent(&self) -> CubeId {
        CubeId { level: self.level + 1, i1: self.i1.div_euclid(2), i2: self.i2.div_euclid(2) }
    }

    fn containing(x: Point, level: i32) -> CubeId {
        let s = 2f64.powi(level);
        CubeId { level, i1: (x[0] / s).floor() as i64, i2: (x[1] / s).floor() as i64 }
    }
}

/// Ratio of cube side to distance to `Ω` below which a dyadic square is admissible.
pub const SIDE_OVER_DISTANCE: f64 = 0.25;
/// Inflation factor of the bump supports.
pub const INFLATION: f64 = 9.0 / 8.0;
/// Geometric constant `C` of the Hölder audit: the gradient Hölder quotient of the
/// extension stays below `C · M` for the fitted Whitney constant `M`.
///
/// The narrow transition band of the bumps (an eighth of the inflation margin on each
/// side, width `side/16`) and anchors up to about eleven sides away make the constant
/// large; resolved local sampling gives ratios near `4·10^4` for smooth jets.
pub const AUDIT_CONSTANT: f64 = 1.0e5;

/// Value and gradient of the extension at a point, with bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionSample {
    pub value: f64,
    pub gradient: Point,
    /// `|Σ φ*_Q - 1|`, zero on `Ω` and in fallbacks.
    pub weight_defect: f64,
    pub cubes: Vec<CubeId>,
    pub fallback: bool,
}

/// Evaluator of the first-order Whitney extension of a jet on the cross.
#[derive(Debug, Clone)]
pub struct WhitneyExtension {
    jet: JetOnCross,
    /// Distance to `Ω` below which the anchored Taylor polynomial is used directly.
    min_distance: f64,
}

impl WhitneyExtension {
    pub fn new(jet: JetOnCross) -> Self {
        let scale = jet.x1_axis.grid.radius().max(jet.x2_axis.grid.radius());
        Self { jet, min_distance: scale * 2f64.powi(-60) }
    }

    pub fn jet(&self) -> &JetOnCross {
        &self.jet
    }

    fn admissible(&self, q: &CubeId) -> bool {
        let (a, b) = q.corners();
        q.side() <= SIDE_OVER_DISTANCE * self.jet.square_distance(a, b)
    }

    fn is_whitney(&self, q: &CubeId) -> bool {
        self.admissible(q) && !self.admissible(&q.parent())
    }

    /// Whitney cubes whose inflated squares contain `x`.
    pub fn cubes_at(&self, x: Point) -> Option<Vec<CubeId>> {
        let d = self.jet.distance(x);
        if d <= self.min_distance {
            return None;
        }
        let mut level = ((SIDE_OVER_DISTANCE * d).log2().ceil() as i32) + 1;
        let own = loop {
            let q = CubeId::containing(x, level);
            if self.admissible(&q) {
                break q;
            }
            level -= 1;
        };
        let mut out = Vec::with_capacity(8);
        let half = 0.5 * INFLATION;
        for lv in own.level - 3..=own.level + 3 {
            let s = 2f64.powi(lv);
            let reach = (half - 0.5) * s;
            let lo = CubeId::containing(x - pt(reach, reach), lv);
            let hi = CubeId::containing(x + pt(reach, reach), lv);
            for i1 in lo.i1..=hi.i1 {
                for i2 in lo.i2..=hi.i2 {
                    let q = CubeId { level: lv, i1, i2 };
                    let c = q.center();
                    if (x - c).amax() < half * s && self.is_whitney(&q) {
                        out.push(q);
                    }
                }
            }
        }
        Some(out)
    }

    fn bump(t: f64) -> (f64, f64) {
        let u = (t.abs() - 0.5) / (0.5 * INFLATION - 0.5);
        let w = 1.0 / (0.5 * INFLATION - 0.5);
        (1.0 - smooth_step(u), -smooth_step_prime(u) * w * t.signum())
    }

    /// Value, gradient and diagnostics of the extension at `x`.
    pub fn sample(&self, x: Point) -> ExtensionSample {
        if let Some(p) = self.jet.on_cross(x) {
            let [h00, h10, h01] = self.jet.at(p);
            return ExtensionSample { value: h00, gradient: pt(h10, h01), weight_defect: 0.0, cubes: vec![], fallback: false };
        }
        let Some(cubes) = self.cubes_at(x) else {
            let (value, gradient) = self.jet.taylor(self.jet.nearest(x), x);
            return ExtensionSample { value, gradient, weight_defect: 0.0, cubes: vec![], fallback: true };
        };
        let base = self.jet.nearest(x);
        let (p0, g0) = self.jet.taylor(base, x);
        let mut phi = Vec::with_capacity(cubes.len());
        let mut total = 0.0;
        for q in &cubes {
            let s = q.side();
            let c = q.center();
            let (b1, d1) = Self::bump((x[0] - c[0]) / s);
            let (b2, d2) = Self::bump((x[1] - c[1]) / s);
            let anchor = self.jet.nearest(c);
            let [_, h10, h01] = self.jet.at(anchor);
            let g = pt(h10, h01);
            // P_Q(x) - P_0(x), split into the remainder between anchors and a gradient term.
            let delta = self.jet.value_remainder(anchor, base) + (g - g0).dot(&(x - anchor.point()));
                total += b1 * b2;
            phi.push((b1 * b2, pt(d1 * b2 / s, b1 * d2 / s), delta, g));
        }
        let shift: f64 = phi.iter().map(|(w, _, d, _)| w * d).sum::<f64>() / total;
        let value = p0 + shift;
        let mut gradient = Point::zeros();
        let mut wsum = 0.0;
        for (w, dw, delta, g) in &phi {
            gradient += g * (w / total) + dw * ((delta - shift) / total);
            wsum += w / total;
        }
        ExtensionSample { value, gradient, weight_defect: (wsum - 1.0).abs(), cubes, fallback: false }
    }

    pub fn eval(&self, x: Point) -> (f64, Point) {
        let s = self.sample(x);
        (s.value, s.gradient)
    }
}

/// The extension sampled on a grid.
#[derive(Debug, Clone)]
pub struct ExtensionField {
    pub value: ScalarField2D,
    pub gradient: VectorField2D,
    pub cube_count: usize,
    /// Sampled sup of `||DH(x) - DH(y)|| / ||x-y||^α`.
    pub attained_holder_constant: f64,
    pub weight_defect: f64,
    pub fallbacks: usize,
}

/// Evaluates the Whitney extension of `jet` on `target`.
pub fn whitney_extend(jet: &JetOnCross, target: &Grid2D, alpha: f64) -> ExtensionField {
    let ext = WhitneyExtension::new(jet.clone());
    let samples: Vec<ExtensionSample> = target.points().collect::<Vec<_>>().par_iter().map(|&x| ext.sample(x)).collect();
    let mut cubes = HashSet::new();
    let mut defect: f64 = 0.0;
    let mut fallbacks = 0;
    for s in &samples {
        cubes.extend(s.cubes.iter().copied());
        defect = defect.max(s.weight_defect);
        fallbacks += s.fallback as usize;
    }
    let value = ScalarField2D::from_values(*target, samples.iter().map(|s| s.value).collect());
    let gradient = VectorField2D::from_values(*target, samples.iter().map(|s| s.gradient).collect());
    let attained = gradient_holder_quotient(&gradient, alpha, 20_000, 7);
    ExtensionField { value, gradient, cube_count: cubes.len(), attained_holder_constant: attained, weight_defect: defect, fallbacks }
}

/// Sup of `||G(x) - G(y)|| / ||x-y||^α` over neighbour pairs and `random_pairs` seeded pairs.
pub fn gradient_holder_quotient(field: &VectorField2D, alpha: f64, random_pairs: usize, seed: u64) -> f64 {
    let g = field.grid();
    let q = |a: (usize, usize), b: (usize, usize)| {
        let d = (g.point(a.0, a.1) - g.point(b.0, b.1)).amax();
        (field.get(a.0, a.1) - field.get(b.0, b.1)).amax() / d.powf(alpha)
    };
    let mut best: f64 = 0.0;
    for i in 0..g.nx {
        for j in 0..g.ny {
            for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
                if i + di < g.nx && j + dj < g.ny {
                    best = best.max(q((i, j), (i + di, j + dj)));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_pairs {
        let a = (rng.random_range(0..g.nx), rng.random_range(0..g.ny));
        let b = (rng.random_range(0..g.nx), rng.random_range(0..g.ny));
        if a != b {
            best = best.max(q(a, b));
        }
    }
    best
}

/// Resolved Hölder audit: sup of `||DH(x) - DH(y)|| / ||x-y||^α` over random `x` in
/// `[-r, r]²` and `y` at log-uniform separations below `dist(x, Ω)`, so that pairs
/// resolve the bump transition bands at every scale.
pub fn audit_gradient_holder(jet: &JetOnCross, alpha: f64, radius: f64, samples: usize, seed: u64) -> f64 {
    let ext = WhitneyExtension::new(jet.clone());
    (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let x = pt(rng.random_range(-radius..radius), rng.random_range(-radius..radius));
            let step = jet.distance(x) * 10f64.powf(rng.random_range(-4.0..0.0));
            let y = x + pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * step;
            let d = (x - y).amax();
            if d == 0.0 {
                return 0.0;
            }
            (ext.eval(x).1 - ext.eval(y).1).amax() / d.powf(alpha)
        })
        .reduce(|| 0.0, f64::max)
}

/// `Ψ* = (H1, H2)` with `H1`, `H2` the Whitney extensions of the two component jets.
#[derive(Debug, Clone)]
pub struct PsiStar {
    pub first: WhitneyExtension,
    pub second: WhitneyExtension,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Both jets are those of the identity, so `Ψ* = id` exactly.
    pub identity: bool,
}

fn is_coordinate_jet(jet: &JetOnCross, component: usize) -> bool {
    let branch_ok = |b: &AxisJetBranch, along: usize| {
        let tol = 4.0 * f64::EPSILON * b.grid.radius() * b.grid.n as f64;
        let (want10, want01) = if component == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
        b.grid.nodes().iter().enumerate().all(|(k, &s)| {
            let want00 = if along == component { s } else { 0.0 };
            (b.h00[k] - want00).abs() <= tol && b.h10[k] == want10 && b.h01[k] == want01
        })
    };
    branch_ok(&jet.x1_axis, 0) && branch_ok(&jet.x2_axis, 1)
}

impl PsiStar {
    pub fn new(first: JetOnCross, second: JetOnCross) -> Self {
        let identity = is_coordinate_jet(&first, 0) && is_coordinate_jet(&second, 1);
        Self { first: WhitneyExtension::new(first), second: WhitneyExtension::new(second), newton_tol: 1e-15, max_newton: 60, identity }
    }

    fn eval_both(&self, x: Point) -> (Point, Mat2) {
        let (v1, g1) = self.first.eval(x);
        let (v2, g2) = self.second.eval(x);
        (pt(v1, v2), Mat2::new(g1[0], g1[1], g2[0], g2[1]))
    }
}

impl CoordinateChange for PsiStar {
    fn forward(&self, x: Point) -> Result<Point, MapError> {
        if self.identity {
            return Ok(x);
        }
        Ok(pt(self.first.eval(x).0, self.second.eval(x).0))
    }

    /// Damped Newton from `y`, halving the step until the residual decreases.
    fn backward(&self, y: Point) -> Result<Point, MapError> {
        if self.identity {
            return Ok(y);
        }
        let mut z = y;
        let (mut v, mut j) = self.eval_both(z);
        let mut r = (v - y).amax();
        let scale = y.amax().max(f64::MIN_POSITIVE);
        for it in 0..self.max_newton {
            if r <= self.newton_tol * scale {
                return Ok(z);
            }
            let jinv = inverse(&j).ok_or(MapError::Singular { x1: z[0], x2: z[1] })?;
            let step = jinv * (v - y);
            let mut mu = 1.0;
            loop {
                let cand = z - step * mu;
                let (cv, cj) = self.eval_both(cand);
                let cr = (cv - y).amax();
                if cr < r || mu < 1e-6 {
                    if cr >= r {
                        return if r <= 1e-12 * scale {
                            Ok(z)
                        } else {
                            Err(MapError::RootFinding { y1: y[0], y2: y[1], residual: r, iterations: it })
                        };
                    }
                    z = cand;
                    v = cv;
                    j = cj;
                    r = cr;
                    break;
                }
                mu *= 0.5;
            }
        }
        if r <= 1e-12 * scale {
            Ok(z)
        } else {
            Err(MapError::RootFinding { y1: y[0], y2: y[1], residual: r, iterations: self.max_newton })
        }
    }

    fn jacobian(&self, x: Point) -> Result<Mat2, MapError> {
        if self.identity {
            return Ok(Mat2::identity());
        }
        Ok(self.eval_both(x).1)
    }

    fn is_identity(&self) -> bool {
        self.identity
    }

    fn label(&self) -> String {
        "whitney Psi*".into()
    }
}

/// Axis checks of `Ψ* ∘ F ∘ Ψ*⁻¹` on sampled axis points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisVerification {
    /// Sup of `|F̃(s,0) - (λ1 s, 0)|` and `|F̃(0,s) - (0, λ2 s)|`.
    pub axis_residual: f64,
    /// Sup of `||DF̃ - Λ||` on the same samples.
    pub jacobian_residual: f64,
    /// `||DΨ*(O) - id||`.
    pub origin_defect: f64,
    pub samples: usize,
}

/// Builds `Ψ*` from the component jets and verifies the conjugated map on both axes.
///
/// Samples are `samples` points per axis spread over `[-r, r]` with `r` a fraction
/// `reach` of each jet interval, so the images stay inside the jets' domain.
pub fn assemble_psi_star(
    first: JetOnCross,
    second: JetOnCross,
    map: MapRef,
    samples: usize,
    reach: f64,
    tolerance: f64,
) -> Result<(Arc<PsiStar>, MapRef, AxisVerification), WhitneyError> {
    let psi = Arc::new(PsiStar::new(first, second));
    let conj: MapRef =
        if psi.identity { map.clone() } else { Arc::new(crate::maps::ConjugatedMap::new(map.clone(), psi.clone())) };
    let (l1, l2) = map.linear_part();
    let lam = diag(l1, l2);
    let r1 = reach * psi.first.jet().x1_axis.grid.radius();
    let r2 = reach * psi.first.jet().x2_axis.grid.radius();
    let mut axis_residual: f64 = 0.0;
    let mut jacobian_residual: f64 = 0.0;
    let mut count = 0;
    for k in 0..samples {
        let t = -1.0 + 2.0 * (k as f64 + 0.5) / samples as f64;
        for (x, want) in [(pt(t * r1, 0.0), pt(l1 * t * r1, 0.0)), (pt(0.0, t * r2), pt(0.0, l2 * t * r2))] {
            let (y, d) = conj.eval_with_jacobian(x)?;
            axis_residual = axis_residual.max((y - want).amax());
            jacobian_residual = jacobian_residual.max(op_norm(&(d - lam)));
            count += 1;
        }
    }
    let origin_defect = op_norm(&(psi.jacobian(pt(0.0, 0.0))? - Mat2::identity()));
    let report = AxisVerification { axis_residual, jacobian_residual, origin_defect, samples: count };
    let worst = axis_residual.max(jacobian_residual);
    if !(worst <= tolerance) {
        return Err(WhitneyError::Verification { residual: worst, tolerance });
    }
    Ok((psi, conj, report))
}

/// Checks `DF = Λ` and axis invariance of `map` on sampled axis points: `true` when the
/// whole Whitney stage can be skipped because `Ψ* = id`.
pub fn already_flat(map: &dyn PlanarMap, radius: f64, samples: usize) -> Result<bool, MapError> {
    let (l1, l2) = map.linear_part();
    let lam = diag(l1, l2);
    for k in 0..=samples {
        let s = radius * (2.0 * k as f64 / samples as f64 - 1.0);
        for x in [pt(s, 0.0), pt(0.0, s)] {
            let (y, d) = map.eval_with_jacobian(x)?;
            if y != lam * x || d != lam {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(r: f64, n: usize) -> AxisGrid {
        AxisGrid::symmetric(r, n).unwrap()
    }

    #[test]
    fn zero_jets_extend_to_zero() {
        let jet = JetOnCross::new(AxisJetBranch::zero(axis(0.5, 101)), AxisJetBranch::zero(axis(0.5, 101)), 1.0).unwrap();
        let f = whitney_extend(&jet, &Grid2D::square(0.6, 41).unwrap(), 1.0);
        assert!(f.value.values().iter().all(|&v| v == 0.0));
        assert!(f.gradient.values().iter().all(|g| g.amax() == 0.0));
        assert!(f.cube_count > 0);
    }

    #[test]
    fn linear_jets_extend_exactly() {
        let (c1, c2) = (0.7, -1.3);
        let jet =
            JetOnCross::restrict(axis(0.5, 101), axis(0.5, 101), 1.0, |x| c1 * x[0] + c2 * x[1], |_| pt(c1, c2)).unwrap();
        let f = whitney_extend(&jet, &Grid2D::square(0.5, 61).unwrap(), 1.0);
        for (k, p) in f.value.grid().points().enumerate() {
            assert!((f.value.values()[k] - (c1 * p[0] + c2 * p[1])).abs() < 1e-12);
            assert!((f.gradient.values()[k] - pt(c1, c2)).amax() < 1e-12);
        }
        assert!(f.weight_defect < 1e-12);
    }

    fn quad_jet(n: usize) -> JetOnCross {
        JetOnCross::restrict(axis(0.5, n), axis(0.5, n), 1.0, |x| x[0] * x[1] + x[0] * x[0], |x| pt(x[1] + 2.0 * x[0], x[0]))
            .unwrap()
    }

    #[test]
    fn smooth_jets_are_reproduced() {
        let jet = quad_jet(201);
        let ext = WhitneyExtension::new(jet.clone());
        for i in (0..201).step_by(7) {
            let s = jet.x1_axis.grid.node(i);
            for (x, p) in [(pt(s, 0.0), CrossPoint::X1(s)), (pt(0.0, s), CrossPoint::X2(s))] {
                let want = jet.at(p);
                let got = ext.sample(x);
                assert!((got.value - want[0]).abs() < 1e-8 && (got.gradient - pt(want[1], want[2])).amax() < 1e-8);
                let near = ext.sample(x + pt(1e-9, -1e-9));
                assert!((near.gradient - pt(want[1], want[2])).amax() < AUDIT_CONSTANT * 3.0 * 1e-9, "{x:?} {:?}", near.gradient);
            }
        }
    }

    #[test]
    fn whitney_cases_on_smooth_jets() {
        let jet = quad_jet(401);
        let check = check_whitney_conditions(&jet, 20_000, 3);
        assert!(check.passed());
        let both2 = check.case(PairCase::BothX2);
        assert_eq!(both2.r00, 0.0);
        assert_eq!(both2.r01, 0.0);
        assert!(check.constant() < 5.0, "{check:?}");
        let f = whitney_extend(&jet, &Grid2D::square(0.5, 81).unwrap(), 1.0);
        assert!(f.weight_defect < 1e-12);
        let bound = AUDIT_CONSTANT * check.constant();
        assert!(f.attained_holder_constant <= bound, "{} {}", f.attained_holder_constant, check.constant());
        let resolved = audit_gradient_holder(&jet, 1.0, 0.4, 50_000, 5);
        assert!(resolved > f.attained_holder_constant && resolved <= bound, "{resolved} {bound}");
    }

    #[test]
    fn whitney_cubes_are_disjoint_and_cover() {
        let jet = quad_jet(101);
        let ext = WhitneyExtension::new(jet);
        for x in [pt(0.013, 0.2), pt(-0.3, 0.001), pt(0.45, -0.45), pt(0.7, 0.0), pt(1e-7, 1e-7)] {
            let cubes = ext.cubes_at(x).unwrap();
            let own = cubes.iter().filter(|q| {
                let (a, b) = q.corners();
                x[0] >= a[0] && x[0] < b[0] && x[1] >= a[1] && x[1] < b[1]
            });
            assert_eq!(own.count(), 1, "{x:?}");
            assert!(cubes.len() <= 12);
        }
    }

    #[test]
    fn identity_psi_star_for_linear_map() {
        let g = axis(0.3, 301);
        let jets = crate::funceq::AxisJets::identity(g, g, 1.0);
        let (a, b) = jet_from_axis_data(&jets).unwrap();
        let map: MapRef = Arc::new(crate::maps::LinearMap::new(0.5, 2.0));
        let (psi, _, report) = assemble_psi_star(a, b, map, 50, 0.4, 1e-12).unwrap();
        assert!(report.axis_residual < 1e-14 && report.jacobian_residual < 1e-12);
        let x = pt(0.1, -0.05);
        assert!((psi.forward(x).unwrap() - x).amax() < 1e-14);
        assert!((psi.backward(psi.forward(x).unwrap()).unwrap() - x).amax() < 1e-14);
        assert!(psi.identity);
        let slow = PsiStar { identity: false, ..(*psi).clone() };
        assert!((slow.forward(x).unwrap() - x).amax() < 1e-14);
        assert!((slow.jacobian(x).unwrap() - Mat2::identity()).amax() < 1e-12);
    }

    fn sheared_gstar() -> MapRef {
        use crate::maps::{make_siegel_counterexample, AxisShear, BumpProfile, ConjugatedMap};
        use crate::spectral::SpectralParams;
        let g = make_siegel_counterexample(SpectralParams::new(0.5, 2.0, 1.0), BumpProfile::default()).unwrap();
        let t = AxisShear::new(1.0, 0.8, 0.1, 0.2).unwrap();
        Arc::new(ConjugatedMap::new(Arc::new(g), Arc::new(t)))
    }

    #[test]
    fn sheared_siegel_map_is_flattened_on_axes() {
        let map = sheared_gstar();
        let g = axis(0.4, 4001);
        let sol = crate::funceq::solve_jets(map.clone(), &g, &g, 1.0, 1e-13, 2000).unwrap();
        let (a, b) = jet_from_axis_data(&sol.jets).unwrap();
        for jet in [&a, &b] {
            let check = check_whitney_conditions(jet, 8000, 11);
            assert!(check.passed(), "{check:?}");
            let seminorm = sol.jets.seminorms().iter().cloned().fold(0.0, f64::max);
            let mixed = check.case(PairCase::X2ThenX1).constant().max(check.case(PairCase::X1ThenX2).constant());
            assert!(mixed <= 2.0 * seminorm.max(1.0), "{mixed} {seminorm}");
            let audit = audit_gradient_holder(jet, 1.0, 0.3, 20_000, 2);
            assert!(audit <= AUDIT_CONSTANT * check.constant(), "{audit}");
        }
        let (psi, _, report) = assemble_psi_star(a, b, map, 10, 0.4, 1e-6).unwrap();
        assert!(report.axis_residual <= 1e-6 && report.jacobian_residual <= 1e-6, "{report:?}");
        assert!(report.origin_defect < 1e-12, "{report:?}");
        let x = pt(0.05, -0.03);
        assert!((psi.forward(psi.backward(x).unwrap()).unwrap() - x).amax() < 1e-13);
    }
}
