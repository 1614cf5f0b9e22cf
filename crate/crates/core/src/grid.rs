//! Rectangular and one-dimensional sample grids with interpolation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul};

use crate::linalg::{Mat2, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid needs at least 2 nodes per direction, got {nx}x{ny}")]
    TooFewNodes { nx: usize, ny: usize },
    #[error("grid bounds are empty or not finite: [{min}, {max}]")]
    BadBounds { min: f64, max: f64 },
}

/// Uniform tensor grid on `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self, GridError> {
        if nx < 2 || ny < 2 {
            return Err(GridError::TooFewNodes { nx, ny });
        }
        for (min, max) in [(x_min, x_max), (y_min, y_max)] {
            if !(min.is_finite() && max.is_finite() && min < max) {
                return Err(GridError::BadBounds { min, max });
            }
        }
        Ok(Self { x_min, x_max, y_min, y_max, nx, ny })
    }

    /// Square grid `[-radius, radius]^2` with `n` nodes per side.
    pub fn square(radius: f64, n: usize) -> Result<Self, GridError> {
        Self::new(-radius, radius, -radius, radius, n, n)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        node(self.x_min, self.x_max, self.nx, i)
    }

    pub fn y(&self, j: usize) -> f64 {
        node(self.y_min, self.y_max, self.ny, j)
    }

    pub fn point(&self, i: usize, j: usize) -> Point {
        Point::new(self.x(i), self.y(j))
    }

    /// Row-major index, `i` runs along x1.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |k| {
            let (i, j) = self.coords(k);
            self.point(i, j)
        })
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    /// Cell containing `p` and local coordinates in `[0,1]^2`.
    pub fn locate(&self, p: Point) -> Option<(usize, usize, f64, f64)> {
        if !self.contains(p) {
            return None;
        }
        let (i, tx) = cell(self.x_min, self.dx(), self.nx, p[0]);
        let (j, ty) = cell(self.y_min, self.dy(), self.ny, p[1]);
        Some((i, j, tx, ty))
    }

    /// Index of the node nearest to `v` along x1, if `v` is a node up to `rel_tol` of the spacing.
    pub fn node_index_x(&self, v: f64, rel_tol: f64) -> Option<usize> {
        snap(self.x_min, self.dx(), self.nx, v, rel_tol)
    }

    pub fn node_index_y(&self, v: f64, rel_tol: f64) -> Option<usize> {
        snap(self.y_min, self.dy(), self.ny, v, rel_tol)
    }
}

fn node(min: f64, max: f64, n: usize, i: usize) -> f64 {
    if i + 1 == n {
        max
    } else {
        min + (max - min) * i as f64 / (n - 1) as f64
    }
}

fn cell(min: f64, h: f64, n: usize, v: f64) -> (usize, f64) {
    let s = (v - min) / h;
    let i = (s.floor() as usize).min(n - 2);
    (i, (s - i as f64).clamp(0.0, 1.0))
}

fn snap(min: f64, h: f64, n: usize, v: f64, rel_tol: f64) -> Option<usize> {
    let s = (v - min) / h;
    let i = s.round();
    if i < 0.0 || i > (n - 1) as f64 || (s - i).abs() > rel_tol {
        return None;
    }
    Some(i as usize)
}

/// Magnitude used to compare field values (max-abs over components).
pub trait FieldValue: Copy + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
    fn distance(&self, other: &Self) -> f64;
}

impl FieldValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
}

impl FieldValue for Point {
    fn zero() -> Self {
        Point::zeros()
    }
    fn magnitude(&self) -> f64 {
        self.amax()
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).amax()
    }
}

impl FieldValue for Mat2 {
    fn zero() -> Self {
        Mat2::zeros()
    }
    fn magnitude(&self) -> f64 {
        self.amax()
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).amax()
    }
}

/// Values sampled at the nodes of a [`Grid2D`].
#[derive(Debug, Clone)]
pub struct Field2D<T> {
    grid: Grid2D,
    values: Vec<T>,
}

pub type ScalarField2D = Field2D<f64>;
pub type VectorField2D = Field2D<Point>;
pub type MatrixField2D = Field2D<Mat2>;

impl<T: FieldValue> Field2D<T> {
    pub fn from_values(grid: Grid2D, values: Vec<T>) -> Self {
        assert_eq!(values.len(), grid.len(), "value count does not match grid");
        Self { grid, values }
    }

    /// Samples `f` at every node in parallel.
    pub fn from_fn<F>(grid: Grid2D, f: F) -> Self
    where
        F: Fn(Point) -> T + Sync,
    {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = grid.coords(k);
                f(grid.point(i, j))
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[self.grid.index(i, j)]
    }

    pub fn map<U: FieldValue>(&self, f: impl Fn(&T) -> U) -> Field2D<U> {
        Field2D { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    /// Piecewise-bilinear interpolation, `None` outside the grid.
    pub fn interpolate(&self, p: Point) -> Option<T> {
        let (i, j, tx, ty) = self.grid.locate(p)?;
        let v00 = self.get(i, j);
        let v10 = self.get(i + 1, j);
        let v01 = self.get(i, j + 1);
        let v11 = self.get(i + 1, j + 1);
        Some(v00 * ((1.0 - tx) * (1.0 - ty)) + v10 * (tx * (1.0 - ty)) + v01 * ((1.0 - tx) * ty) + v11 * (tx * ty))
    }

    pub fn sup_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.magnitude()).fold(0.0, f64::max)
    }
}

impl VectorField2D {
    pub fn component(&self, c: usize) -> ScalarField2D {
        self.map(|v| v[c])
    }
}

/// Uniform grid on an interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisGrid {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl AxisGrid {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self, GridError> {
        if n < 2 {
            return Err(GridError::TooFewNodes { nx: n, ny: 1 });
        }
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(GridError::BadBounds { min, max });
        }
        Ok(Self { min, max, n })
    }

    /// Symmetric grid on `[-radius, radius]`; `n` is bumped to the next odd count so 0 is a node.
    pub fn symmetric(radius: f64, n: usize) -> Result<Self, GridError> {
        Self::new(-radius, radius, n | 1)
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        let v = node(self.min, self.max, self.n, i);
        if self.min == -self.max && 2 * i + 1 == self.n {
            0.0
        } else {
            v
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.min && s <= self.max
    }

    /// Index of the node at 0, when 0 is a node.
    pub fn zero_index(&self) -> Option<usize> {
        snap(self.min, self.step(), self.n, 0.0, 1e-9)
    }

    pub fn radius(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }
}

/// One-dimensional function sampled on an [`AxisGrid`], linearly interpolated.
///
/// Outside the grid the function is extended by zero, which is the compact-support
/// convention used for graph and jet data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFunction {
    pub grid: AxisGrid,
    pub values: Vec<f64>,
    #[serde(default)]
    pub outside: f64,
}

impl AxisFunction {
    pub fn new(grid: AxisGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n, "value count does not match axis grid");
        Self { grid, values, outside: 0.0 }
    }

    pub fn from_fn(grid: AxisGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn constant(grid: AxisGrid, c: f64) -> Self {
        Self::new(grid, vec![c; grid.n])
    }

    /// Value used beyond the sampled interval.
    pub fn with_outside(mut self, value: f64) -> Self {
        self.outside = value;
        self
    }

    pub fn eval(&self, s: f64) -> f64 {
        if !self.grid.contains(s) {
            return self.outside;
        }
        let (i, t) = cell(self.grid.min, self.grid.step(), self.grid.n, s);
        if t == 0.0 {
            return self.values[i];
        }
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Derivative from nodal central differences, linearly interpolated.
    pub fn derivative(&self, s: f64) -> f64 {
        if !self.grid.contains(s) {
            return 0.0;
        }
        let (i, t) = cell(self.grid.min, self.grid.step(), self.grid.n, s);
        let d = |k: usize| self.nodal_derivative(k);
        if t == 0.0 {
            return d(i);
        }
        d(i) * (1.0 - t) + d(i + 1) * t
    }

    fn nodal_derivative(&self, k: usize) -> f64 {
        let h = self.grid.step();
        let n = self.grid.n;
        if k == 0 {
            (self.values[1] - self.values[0]) / h
        } else if k + 1 == n {
            (self.values[n - 1] - self.values[n - 2]) / h
        } else {
            (self.values[k + 1] - self.values[k - 1]) / (2.0 * h)
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &AxisFunction) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Measured sup of `|f(s)-f(t)|/|s-t|^alpha` over node pairs.
    ///
    /// Large grids are thinned to at most `max_nodes` nodes, always keeping 0 when it is a node.
    pub fn holder_seminorm(&self, alpha: f64) -> f64 {
        holder_seminorm_of(&self.grid, &self.values, alpha, 513)
    }
}

pub(crate) fn holder_seminorm_of(grid: &AxisGrid, values: &[f64], alpha: f64, max_nodes: usize) -> f64 {
    let n = grid.n;
    let stride = n.div_ceil(max_nodes).max(1);
    let anchor = grid.zero_index().unwrap_or(0);
    let first = anchor % stride;
    let idx: Vec<usize> = (first..n).step_by(stride).collect();
    let mut best: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        let si = grid.node(i);
        for &j in &idx[a + 1..] {
            let q = (values[i] - values[j]).abs() / (grid.node(j) - si).abs().powf(alpha);
            best = best.max(q);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pt;

    #[test]
    fn bilinear_is_exact_on_bilinear_functions() {
        let g = Grid2D::square(1.0, 11).unwrap();
        let f = ScalarField2D::from_fn(g, |p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1]);
        let q = pt(0.137, -0.52);
        let exact = 1.0 + 2.0 * q[0] - q[1] + 0.5 * q[0] * q[1];
        assert!((f.interpolate(q).unwrap() - exact).abs() < 1e-14);
        assert!(f.interpolate(pt(1.5, 0.0)).is_none());
    }

    #[test]
    fn nodes_hit_endpoints_and_zero() {
        let a = AxisGrid::symmetric(0.3, 600).unwrap();
        assert_eq!(a.n, 601);
        assert_eq!(a.node(300), 0.0);
        assert_eq!(a.node(600), 0.3);
        assert_eq!(a.zero_index(), Some(300));
    }

    #[test]
    fn axis_function_extends_by_outside_value() {
        let a = AxisGrid::symmetric(1.0, 21).unwrap();
        let f = AxisFunction::from_fn(a, |s| s * s);
        assert_eq!(f.eval(2.0), 0.0);
        assert_eq!(f.clone().with_outside(1.0).eval(-3.0), 1.0);
        assert!((f.eval(0.55) - 0.3025).abs() < 3e-3);
        assert!((f.derivative(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seminorm_of_square_root() {
        let a = AxisGrid::symmetric(1.0, 2001).unwrap();
        let f = AxisFunction::from_fn(a, |s: f64| s.abs().sqrt());
        let h = f.holder_seminorm(0.5);
        assert!((h - 1.0).abs() < 1e-12, "{h}");
    }
}
