//! Empirical Hölder exponents of sampled derivative fields.
//!
//! [`estimate_holder_exponent`] bins node pairs by dyadic distance, takes a high
//! quantile of the field increments in each bin and regresses the log-envelope on
//! the log-distance. Half of the pairs (by default) are anchored at hot nodes,
//! those whose summed increment to the eight neighbours is within a factor of the
//! largest, so that thin singular sets are not undersampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{Field2D, FieldValue};
use crate::linalg::{norm, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HolderError {
    #[error("field grid offers {available} dyadic distance scales, {required} required")]
    InsufficientScales { available: usize, required: usize },
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("anchor or ray leaves the field at distance {0}")]
    OutsideField(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub seed: u64,
    /// Per-bin envelope quantile of the increments.
    pub quantile: f64,
    pub pairs_per_bin: usize,
    /// Fraction of pairs anchored at the hot nodes.
    pub hot_fraction: f64,
    /// Nodes whose local variation is at least this fraction of the largest one are hot.
    pub hot_threshold: f64,
    /// Cap on the number of hot anchors (largest variation first).
    pub hot_anchors: usize,
    pub min_scales: usize,
    /// Finest bins left out of the regression.
    pub skip_fine_bins: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { seed: 0, quantile: 0.95, pairs_per_bin: 10_000, hot_fraction: 0.5, hot_threshold: 0.5, hot_anchors: 4096, min_scales: 4, skip_fine_bins: 0 }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<(), HolderError> {
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(HolderError::Config(format!("quantile {} outside (0, 1]", self.quantile)));
        }
        if !(0.0..=1.0).contains(&self.hot_fraction) {
            return Err(HolderError::Config(format!("hot_fraction {} outside [0, 1]", self.hot_fraction)));
        }
        if self.pairs_per_bin == 0 {
            return Err(HolderError::Config("pairs_per_bin must be positive".into()));
        }
        if !(self.hot_threshold > 0.0 && self.hot_threshold <= 1.0) {
            return Err(HolderError::Config(format!("hot_threshold {} outside (0, 1]", self.hot_threshold)));
        }
        if self.hot_fraction > 0.0 && self.hot_anchors == 0 {
            return Err(HolderError::Config("hot_anchors must be positive when hot_fraction > 0".into()));
        }
        Ok(())
    }
}

/// Envelope of one dyadic distance bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinEnvelope {
    /// Geometric mean of the pair distances.
    pub distance: f64,
    pub envelope: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub beta_hat: f64,
    pub constant_hat: f64,
    pub regression_r2: f64,
    pub pair_count: usize,
    pub distance_decades: u32,
    /// Fewer than two bins with a nonzero envelope; `beta_hat` is the cap.
    pub degenerate: bool,
    /// Slope before capping to `[0, 1]`.
    pub raw_slope: f64,
    pub bins: Vec<BinEnvelope>,
}

/// Number of dyadic bins `[2^k, 2^{k+1})` (in nodes) that fit twice into the grid.
fn bin_count(nx: usize, ny: usize) -> usize {
    let span = (nx.min(ny).saturating_sub(1)) / 2;
    let mut k = 0;
    while (1usize << (k + 1)) <= span {
        k += 1;
    }
    k
}

fn local_variation<T: FieldValue>(field: &Field2D<T>) -> Vec<f64> {
    let g = *field.grid();
    (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = g.coords(idx);
            let v = field.get(i, j);
            let mut sum = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (pi, pj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) != (0, 0) && pi >= 0 && pj >= 0 && (pi as usize) < g.nx && (pj as usize) < g.ny {
                        sum += v.distance(&field.get(pi as usize, pj as usize));
                    }
                }
            }
            sum
        })
        .collect()
}

fn hot_nodes(variation: &[f64], threshold: f64, k: usize) -> Vec<usize> {
    let top = variation.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Vec::new();
    }
    let key = |i: usize| (variation[i] / top * 1e9).round() as u64;
    let cut = (threshold * 1e9).round() as u64;
    let mut idx: Vec<usize> = (0..variation.len()).filter(|&i| key(i) >= cut).collect();
    idx.sort_by(|&a, &b| key(b).cmp(&key(a)).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Random node offset with max-norm (in nodes) in `[2^k, 2^{k+1})` whose partner stays on the grid.
fn partner(rng: &mut ChaCha8Rng, i: usize, j: usize, nx: usize, ny: usize, k: usize) -> Option<(usize, usize)> {
    let lo = 1i64 << k;
    for _ in 0..32 {
        let m = rng.random_range(lo..2 * lo);
        let t = rng.random_range(-m..=m);
        let (mut di, mut dj) = if rng.random_bool(0.5) { (m, t) } else { (t, m) };
        if rng.random_bool(0.5) {
            di = -di;
        }
        if rng.random_bool(0.5) {
            dj = -dj;
        }
        for (si, sj) in [(1, 1), (-1, 1), (1, -1), (-1, -1)] {
            let pi = i as i64 + si * di;
            let pj = j as i64 + sj * dj;
            if pi >= 0 && pj >= 0 && (pi as usize) < nx && (pj as usize) < ny {
                return Some((pi as usize, pj as usize));
            }
        }
    }
    None
}

fn quantile_of(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1;
    let (_, v, _) = values.select_nth_unstable_by(rank, f64::total_cmp);
    *v
}

/// Least-squares fit `y = a + b x`, returning `(a, b, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (my - b * mx, b, r2)
}

pub fn estimate_holder_exponent<T: FieldValue>(field: &Field2D<T>, cfg: &SamplerConfig) -> Result<HolderEstimate, HolderError> {
    cfg.validate()?;
    let g = *field.grid();
    let bins = bin_count(g.nx, g.ny);
    if bins < cfg.min_scales {
        return Err(HolderError::InsufficientScales { available: bins, required: cfg.min_scales });
    }
    let variation = local_variation(field);
    let hot = if cfg.hot_fraction > 0.0 { hot_nodes(&variation, cfg.hot_threshold, cfg.hot_anchors) } else { Vec::new() };
    let hot_pairs = (cfg.hot_fraction * cfg.pairs_per_bin as f64).round() as usize;

    let envelopes: Vec<BinEnvelope> = (0..bins)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut diffs = Vec::with_capacity(cfg.pairs_per_bin);
            let mut log_d = 0.0;
            for p in 0..cfg.pairs_per_bin {
                let (i, j) = if p < hot_pairs && !hot.is_empty() {
                    g.coords(hot[rng.random_range(0..hot.len())])
                } else {
                    (rng.random_range(0..g.nx), rng.random_range(0..g.ny))
                };
                let Some((pi, pj)) = partner(&mut rng, i, j, g.nx, g.ny, k) else { continue };
                let d = norm(&(g.point(i, j) - g.point(pi, pj)));
                log_d += d.ln();
                diffs.push(field.get(i, j).distance(&field.get(pi, pj)));
            }
            let pairs = diffs.len();
            let distance = if pairs > 0 { (log_d / pairs as f64).exp() } else { 0.0 };
            BinEnvelope { distance, envelope: quantile_of(&mut diffs, cfg.quantile), pairs }
        })
        .collect();

    let pair_count = envelopes.iter().map(|b| b.pairs).sum();
    let distance_decades = ((1u64 << bins) as f64).log10().floor() as u32;
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        envelopes.iter().skip(cfg.skip_fine_bins).filter(|b| b.envelope > 0.0 && b.pairs > 0).map(|b| (b.distance.ln(), b.envelope.ln())).unzip();
    if xs.len() < 2 {
        return Ok(HolderEstimate {
            beta_hat: 1.0,
            constant_hat: 0.0,
            regression_r2: 1.0,
            pair_count,
            distance_decades,
            degenerate: true,
            raw_slope: f64::NAN,
            bins: envelopes,
        });
    }
    let (a, b, r2) = linear_fit(&xs, &ys);
    Ok(HolderEstimate {
        beta_hat: b.clamp(0.0, 1.0),
        constant_hat: a.exp(),
        regression_r2: r2,
        pair_count,
        distance_decades,
        degenerate: false,
        raw_slope: b,
        bins: envelopes,
    })
}

/// One row of a local modulus table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub beta: f64,
    pub distance: f64,
    pub quotient: f64,
}

/// `||D(anchor + d e) - D(anchor)|| / d^beta` for each level `d` and each `beta`.
///
/// `eval` returns `None` outside its domain. `direction` is normalized in the max-norm.
pub fn local_modulus<V: FieldValue>(
    eval: impl Fn(Point) -> Option<V>,
    anchor: Point,
    direction: Point,
    levels: &[f64],
    betas: &[f64],
) -> Result<Vec<ModulusRow>, HolderError> {
    let e = direction / norm(&direction);
    let base = eval(anchor).ok_or(HolderError::OutsideField(0.0))?;
    let mut rows = Vec::with_capacity(levels.len() * betas.len());
    let diffs: Vec<(f64, f64)> = levels
        .iter()
        .map(|&d| eval(anchor + e * d).map(|v| (d, v.distance(&base))).ok_or(HolderError::OutsideField(d)))
        .collect::<Result<_, _>>()?;
    for &beta in betas {
        for &(d, q) in &diffs {
            rows.push(ModulusRow { beta, distance: d, quotient: q / d.powf(beta) });
        }
    }
    Ok(rows)
}

/// Growth summary of the quotients for one `beta`, read from large to small distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusGrowth {
    pub beta: f64,
    /// `log10` of the distance span.
    pub decades: f64,
    /// Trend growth factor `(d_min / d_max)^slope` from the log-log fit.
    pub trend_growth: f64,
    /// Largest quotient over the quotient at the largest distance.
    pub max_ratio: f64,
}

impl ModulusGrowth {
    /// At least `factor`-fold trend growth toward small distances.
    pub fn blows_up(&self, factor: f64) -> bool {
        self.trend_growth >= factor
    }

    /// No quotient exceeds `factor` times the one at the largest distance.
    pub fn bounded(&self, factor: f64) -> bool {
        self.max_ratio < factor
    }
}

pub fn modulus_growth(rows: &[ModulusRow], beta: f64) -> Option<ModulusGrowth> {
    let mut sel: Vec<&ModulusRow> = rows.iter().filter(|r| r.beta == beta && r.distance > 0.0).collect();
    if sel.len() < 2 {
        return None;
    }
    sel.sort_by(|a, b| b.distance.total_cmp(&a.distance));
    let dmax = sel[0].distance;
    let dmin = sel[sel.len() - 1].distance;
    let first = sel[0].quotient;
    let max_ratio = sel.iter().map(|r| r.quotient).fold(0.0, f64::max) / first;
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        sel.iter().filter(|r| r.quotient > 0.0).map(|r| (r.distance.ln(), r.quotient.ln())).unzip();
    let trend_growth = if xs.len() >= 2 {
        let (_, slope, _) = linear_fit(&xs, &ys);
        (slope * (dmin / dmax).ln()).exp()
    } else {
        0.0
    };
    Some(ModulusGrowth { beta, decades: (dmax / dmin).log10(), trend_growth, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid2D, ScalarField2D, VectorField2D};
    use crate::linalg::pt;

    fn power_field(n: usize, b: f64) -> VectorField2D {
        VectorField2D::from_fn(Grid2D::square(1.0, n).unwrap(), |x| pt(norm(&x).powf(b), 0.0))
    }

    #[test]
    fn constant_field_is_degenerate() {
        let f = ScalarField2D::from_fn(Grid2D::square(1.0, 65).unwrap(), |_| 3.0);
        let est = estimate_holder_exponent(&f, &SamplerConfig { pairs_per_bin: 200, ..Default::default() }).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.beta_hat, 1.0);
    }

    #[test]
    fn too_few_scales() {
        let f = ScalarField2D::from_fn(Grid2D::square(1.0, 9).unwrap(), |x| x[0]);
        assert!(matches!(
            estimate_holder_exponent(&f, &SamplerConfig::default()),
            Err(HolderError::InsufficientScales { .. })
        ));
    }

    #[test]
    fn square_root_field() {
        let est = estimate_holder_exponent(&power_field(513, 0.5), &SamplerConfig { pairs_per_bin: 2000, ..Default::default() }).unwrap();
        assert!((est.beta_hat - 0.5).abs() <= 0.05, "{est:?}");
    }

    #[test]
    fn lipschitz_field_caps_at_one() {
        let f = ScalarField2D::from_fn(Grid2D::square(1.0, 257).unwrap(), |x| 0.5 * x[0] + x[1]);
        let est = estimate_holder_exponent(&f, &SamplerConfig { pairs_per_bin: 1000, ..Default::default() }).unwrap();
        assert!(est.beta_hat > 0.95, "{est:?}");
    }

    #[test]
    fn modulus_of_linear_field_is_zero() {
        let rows = local_modulus(|x: Point| Some(pt(2.0, 3.0) + x * 0.0), pt(0.1, 0.0), pt(0.0, 1.0), &[1e-2, 1e-3], &[0.5]).unwrap();
        assert!(rows.iter().all(|r| r.quotient == 0.0));
    }

    #[test]
    fn modulus_growth_of_power_law() {
        let levels: Vec<f64> = (0..=16).map(|k| 0.1 * 0.5f64.powi(k)).collect();
        let rows = local_modulus(|x: Point| Some(x[1].abs().sqrt()), pt(0.0, 0.0), pt(0.0, 1.0), &levels, &[0.4, 0.6]).unwrap();
        let up = modulus_growth(&rows, 0.6).unwrap();
        let down = modulus_growth(&rows, 0.4).unwrap();
        let expected = 2f64.powf(1.6);
        assert!((up.trend_growth - expected).abs() < 1e-9);
        assert!(down.bounded(10.0));
        assert!(!down.blows_up(1.0));
    }
}
