//! Experiment configuration: the raw TOML form and its validated, normalized form.

use std::path::{Path, PathBuf};

use linlab_core::spectral::{normalize, DomainKind, SpectralError};
use linlab_core::SpectralParams;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("no experiment given (use a subcommand or `experiment = ...`)")]
    MissingExperiment,
    #[error("map.lambda1 = {lambda1}, map.lambda2 = {lambda2}: invalid hyperbolicity (an eigenvalue has modulus 1, 0 or is not finite)")]
    InvalidHyperbolicity { lambda1: f64, lambda2: f64 },
    #[error("grid.extent = {extent} exceeds map.inner_radius = {inner}; conjugacy runs must stay inside the bump's inner disk")]
    ExtentExceedsInner { extent: f64, inner: f64 },
    #[error("{field} = {value}: {reason}")]
    Invalid { field: &'static str, value: String, reason: &'static str },
}

fn invalid(field: &'static str, value: impl ToString, reason: &'static str) -> ConfigError {
    ConfigError::Invalid { field, value: value.to_string(), reason }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Linearize,
    Flatten,
    Funceq,
    Whitney,
    Holder,
    PoincareSharpness,
    SiegelSharpness,
    Curves,
}

impl Experiment {
    pub fn id(self) -> &'static str {
        match self {
            Self::Linearize => "linearize",
            Self::Flatten => "flatten",
            Self::Funceq => "funceq",
            Self::Whitney => "whitney",
            Self::Holder => "holder",
            Self::PoincareSharpness => "poincare-sharpness",
            Self::SiegelSharpness => "siegel-sharpness",
            Self::Curves => "curves",
        }
    }

    /// Runs that evaluate a conjugacy on a 2-D grid.
    pub fn is_conjugacy_run(self) -> bool {
        matches!(self, Self::Linearize | Self::Holder | Self::PoincareSharpness | Self::SiegelSharpness)
    }

    fn default_params(self) -> SpectralParams {
        match self {
            Self::Linearize => SpectralParams::new(0.2, 0.5, 0.9),
            Self::PoincareSharpness => SpectralParams::new(0.25, 0.5, 0.4),
            _ => SpectralParams::new(0.5, 2.0, 1.0),
        }
    }

    fn default_resolution(self) -> usize {
        match self {
            Self::Holder | Self::SiegelSharpness => 1025,
            Self::Whitney => 101,
            _ => 201,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapFamily {
    /// `diag(lambda1, lambda2)`.
    Linear,
    /// The Poincaré or Siegel counterexample, chosen by the eigenvalues.
    Counterexample,
    /// The counterexample conjugated by an axis-fixing shear.
    Sheared,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMap {
    pub family: Option<MapFamily>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub alpha: Option<f64>,
    pub inner_radius: Option<f64>,
    pub outer_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub extent: Option<f64>,
    pub resolution: Option<usize>,
    pub axis_nodes: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSharpness {
    pub xi: Option<f64>,
    pub omega: Option<f64>,
    pub k_min: Option<u32>,
    pub k_max: Option<u32>,
    pub decades: Option<u32>,
    pub per_decade: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHolder {
    pub quantile: Option<f64>,
    pub pairs_per_bin: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCurves {
    pub figure: Option<u8>,
    pub samples: Option<usize>,
}

/// Configuration as read from TOML; every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub map: RawMap,
    #[serde(default)]
    pub grid: RawGrid,
    #[serde(default)]
    pub solver: RawSolver,
    #[serde(default)]
    pub sharpness: RawSharpness,
    #[serde(default)]
    pub holder: RawHolder,
    #[serde(default)]
    pub curves: RawCurves,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub family: MapFamily,
    /// Normalized parameters: contracting, with `|lambda1| < |lambda2|`.
    pub params: SpectralParams,
    /// Parameters as given.
    pub requested: SpectralParams,
    pub inverted: bool,
    pub swapped: bool,
    pub domain: DomainKind,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Half-width of the square grid; `None` means the map's support radius.
    pub extent: Option<f64>,
    pub resolution: usize,
    pub axis_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessConfig {
    /// Anchor `(xi, 0)` of the quotient and modulus tables.
    pub xi: f64,
    /// Transversal scale: the largest modulus distance.
    pub omega: f64,
    pub k_min: u32,
    pub k_max: u32,
    pub decades: u32,
    pub per_decade: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub map: MapConfig,
    pub grid: GridConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub sharpness: SharpnessConfig,
    pub quantile: f64,
    pub pairs_per_bin: usize,
    pub figure: Option<u8>,
    pub curve_samples: usize,
    /// Defaults filled in and normalizations applied, in order.
    pub notes: Vec<String>,
}

fn positive(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, v, "must be positive and finite"))
    }
}

/// Fills defaults, normalizes the eigenvalues and checks every invariant.
pub fn validate_config(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let mut notes = Vec::new();
    let experiment = raw.experiment.ok_or(ConfigError::MissingExperiment)?;
    let mut default = |field: &str, value: String| notes.push(format!("{field} defaulted to {value}"));

    let dp = experiment.default_params();
    let requested = SpectralParams::new(
        raw.map.lambda1.unwrap_or_else(|| {
            default("map.lambda1", dp.lambda1.to_string());
            dp.lambda1
        }),
        raw.map.lambda2.unwrap_or_else(|| {
            default("map.lambda2", dp.lambda2.to_string());
            dp.lambda2
        }),
        raw.map.alpha.unwrap_or_else(|| {
            default("map.alpha", dp.alpha.to_string());
            dp.alpha
        }),
    );
    let norm = normalize(&requested).map_err(|e| match e {
        SpectralError::InvalidHyperbolicity { lambda1, lambda2 } => ConfigError::InvalidHyperbolicity { lambda1, lambda2 },
        SpectralError::AlphaOutOfRange(a) => invalid("map.alpha", a, "must lie in (0, 1]"),
        _ => invalid("map", format!("{requested:?}"), "unsupported eigenvalues"),
    })?;
    if norm.params.lambda1.abs() == norm.params.lambda2.abs() {
        return Err(invalid("map.lambda2", requested.lambda2, "must differ in modulus from map.lambda1"));
    }
    let domain = linlab_core::spectral::classify_domain(&norm.params);
    if norm.inverted {
        notes.push(format!(
            "expanding eigenvalues ({}, {}) inverted: the inverse map is studied",
            requested.lambda1, requested.lambda2
        ));
    }
    if norm.swapped {
        notes.push("coordinates swapped so that |lambda1| < |lambda2|".into());
    }

    let family = raw.map.family.unwrap_or(MapFamily::Counterexample);
    let inner = positive("map.inner_radius", raw.map.inner_radius.unwrap_or(0.1))?;
    let outer = positive("map.outer_radius", raw.map.outer_radius.unwrap_or(2.0 * inner))?;
    if outer <= inner {
        return Err(invalid("map.outer_radius", outer, "must exceed map.inner_radius"));
    }

    let tol = match raw.solver.tol {
        Some(t) => positive("solver.tol", t)?,
        None => {
            notes.push(format!("solver.tol defaulted to {DEFAULT_TOL:e}"));
            DEFAULT_TOL
        }
    };
    let max_iter = raw.solver.max_iter.unwrap_or(400);
    if max_iter == 0 {
        return Err(invalid("solver.max_iter", 0, "must be positive"));
    }

    let extent = match raw.grid.extent {
        Some(e) => Some(positive("grid.extent", e)?),
        None if experiment.is_conjugacy_run() => Some(0.5 * inner),
        None => None,
    };
    if experiment.is_conjugacy_run() && family != MapFamily::Linear {
        if let Some(e) = extent {
            if e > inner {
                return Err(ConfigError::ExtentExceedsInner { extent: e, inner });
            }
        }
    }
    let resolution = raw.grid.resolution.unwrap_or(experiment.default_resolution());
    if resolution < 3 {
        return Err(invalid("grid.resolution", resolution, "needs at least 3 nodes per direction"));
    }
    let axis_nodes = raw.grid.axis_nodes.unwrap_or(2001);
    if axis_nodes < 5 || axis_nodes % 2 == 0 {
        return Err(invalid("grid.axis_nodes", axis_nodes, "must be odd and at least 5 so that 0 is a node"));
    }

    let sh = &raw.sharpness;
    let reach = extent.unwrap_or(outer);
    let xi = sh.xi.unwrap_or(if experiment == Experiment::SiegelSharpness { 0.25 * inner } else { 0.5 * inner });
    let omega = sh.omega.unwrap_or(0.2 * inner);
    let sharpness_run = matches!(experiment, Experiment::PoincareSharpness | Experiment::SiegelSharpness);
    if sharpness_run && !(xi > 0.0 && xi <= reach) {
        return Err(invalid("sharpness.xi", xi, "must lie in (0, grid.extent]"));
    }
    if sharpness_run && !(omega > 0.0 && omega <= reach) {
        return Err(invalid("sharpness.omega", omega, "must lie in (0, grid.extent]"));
    }
    let k_min = sh.k_min.unwrap_or(6);
    let k_max = sh.k_max.unwrap_or(16);
    if k_min >= k_max || k_max > 40 {
        return Err(invalid("sharpness.k_max", k_max, "must exceed sharpness.k_min and be at most 40"));
    }
    if experiment == Experiment::PoincareSharpness && 2f64.powi(-(k_min as i32)) > reach {
        return Err(invalid("sharpness.k_min", k_min, "2^-k_min must lie within grid.extent"));
    }
    let decades = sh.decades.unwrap_or(4);
    let per_decade = sh.per_decade.unwrap_or(3);
    if decades == 0 || per_decade == 0 {
        return Err(invalid("sharpness.decades", decades, "decades and per_decade must be positive"));
    }

    let quantile = raw.holder.quantile.unwrap_or(0.95);
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(invalid("holder.quantile", quantile, "must lie in (0, 1]"));
    }
    let pairs_per_bin = raw.holder.pairs_per_bin.unwrap_or(10_000);
    if pairs_per_bin == 0 {
        return Err(invalid("holder.pairs_per_bin", 0, "must be positive"));
    }
    if let Some(f) = raw.curves.figure {
        if !(1..=4).contains(&f) {
            return Err(invalid("curves.figure", f, "must be 1, 2, 3 or 4"));
        }
    }
    let curve_samples = raw.curves.samples.unwrap_or(100);
    if curve_samples == 0 {
        return Err(invalid("curves.samples", 0, "must be positive"));
    }

    Ok(ExperimentConfig {
        experiment,
        seed: raw.seed.unwrap_or(0),
        out: raw.out,
        map: MapConfig {
            family,
            params: norm.params,
            requested,
            inverted: norm.inverted,
            swapped: norm.swapped,
            domain,
            inner_radius: inner,
            outer_radius: outer,
        },
        grid: GridConfig { extent, resolution, axis_nodes },
        tol,
        max_iter,
        sharpness: SharpnessConfig { xi, omega, k_min, k_max, decades, per_decade },
        quantile,
        pairs_per_bin,
        figure: raw.curves.figure,
        curve_samples,
        notes,
    })
}
