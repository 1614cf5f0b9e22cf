//! Experiment runners. Each one delegates to `linlab-core` and records which
//! operation produced every table and summary entry.

use std::sync::Arc;
use std::time::Instant;

use linlab_core::conjugacy::{
    linearize_poincare_with, linearize_siegel_with, one_sided_quotients, ConjugacyResult, Direction, LimitOptions,
    PointwiseConjugacy, SiegelLimit,
};
use linlab_core::funceq::{jet_matrix_residual, solve_jets, JetSolution};
use linlab_core::holder::{estimate_holder_exponent, local_modulus, modulus_growth, HolderEstimate, SamplerConfig};
use linlab_core::manifolds::{flatten_poincare, flatten_siegel, FlattenOptions};
use linlab_core::maps::{make_poincare_counterexample, make_siegel_counterexample, AxisShear, ConjugatedMap, LinearMap};
use linlab_core::spectral::{derived_exponents, sharpness_curve, siegel_curve_slope, CurveFlag, DomainKind, Figure};
use linlab_core::whitney::{check_whitney_conditions, jet_from_axis_data, whitney_extend};
use linlab_core::{pt, AxisGrid, BumpProfile, Grid2D, MapRef, PlanarMap};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Experiment, ExperimentConfig, MapFamily};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A numeric failure, tagged with the module that raised it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{module}: {message}")]
pub struct RunError {
    pub module: &'static str,
    pub message: String,
}

fn fail(module: &'static str) -> impl Fn(&dyn std::fmt::Display) -> RunError {
    move |e| RunError { module, message: e.to_string() }
}

macro_rules! tri {
    ($module:literal, $e:expr) => {
        $e.map_err(|e| fail($module)(&e))?
    };
}

/// A named table of rows, each cell already formatted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Shortest round-trip decimal.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub item: String,
    pub operation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    pub summary: Map<String, Value>,
    pub provenance: Vec<Provenance>,
    pub wall_time_s: f64,
    pub artifact_version: &'static str,
}

impl ResultBundle {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

struct Builder {
    tables: Vec<Table>,
    summary: Map<String, Value>,
    provenance: Vec<Provenance>,
}

impl Builder {
    fn new() -> Self {
        Self { tables: Vec::new(), summary: Map::new(), provenance: Vec::new() }
    }

    fn table(&mut self, t: Table, op: &str) {
        self.provenance.push(Provenance { item: format!("table {}", t.name), operation: op.into() });
        self.tables.push(t);
    }

    fn set(&mut self, key: &str, value: impl Serialize, op: &str) {
        self.summary.insert(key.into(), json!(value));
        self.provenance.push(Provenance { item: format!("summary {key}"), operation: op.into() });
    }
}

/// Builds the map named by the configuration.
pub fn build_map(cfg: &ExperimentConfig) -> Result<MapRef, RunError> {
    let m = &cfg.map;
    let p = m.params;
    if m.family == MapFamily::Linear {
        return Ok(Arc::new(LinearMap::new(p.lambda1, p.lambda2)));
    }
    let profile = tri!("maps", BumpProfile::new(m.inner_radius, m.outer_radius));
    let base: MapRef = match m.domain {
        DomainKind::PoincareContraction => Arc::new(tri!("maps", make_poincare_counterexample(p, profile))),
        DomainKind::Siegel => Arc::new(tri!("maps", make_siegel_counterexample(p, profile))),
        other => return Err(RunError { module: "maps", message: format!("no counterexample for the {other:?} domain") }),
    };
    if m.family == MapFamily::Counterexample {
        return Ok(base);
    }
    let shear = tri!("maps", AxisShear::new(1.0, 0.8, 0.5 * m.inner_radius, 1.5 * m.inner_radius));
    let support = base.support_radius();
    Ok(Arc::new(ConjugatedMap::new(base, Arc::new(shear)).with_support_radius(support)))
}

fn square_grid(cfg: &ExperimentConfig, map: &dyn PlanarMap) -> Result<Grid2D, RunError> {
    let extent = cfg.grid.extent.or(map.support_radius().filter(|r| *r > 0.0)).unwrap_or(1.0);
    Ok(tri!("grid", Grid2D::square(extent, cfg.grid.resolution)))
}

fn axis_grid(cfg: &ExperimentConfig, map: &dyn PlanarMap) -> Result<AxisGrid, RunError> {
    let extent = cfg.grid.extent.or(map.support_radius().filter(|r| *r > 0.0)).unwrap_or(1.0);
    Ok(tri!("grid", AxisGrid::symmetric(extent, cfg.grid.axis_nodes)))
}

fn limit_options(cfg: &ExperimentConfig) -> LimitOptions {
    LimitOptions::new(cfg.tol, cfg.max_iter)
}

/// Runs one experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultBundle, RunError> {
    let start = Instant::now();
    let mut b = Builder::new();
    match cfg.experiment {
        Experiment::Linearize => linearize(cfg, &mut b)?,
        Experiment::Flatten => flatten(cfg, &mut b)?,
        Experiment::Funceq => funceq(cfg, &mut b)?,
        Experiment::Whitney => whitney(cfg, &mut b)?,
        Experiment::Holder => holder(cfg, &mut b)?,
        Experiment::PoincareSharpness => poincare_sharpness(cfg, &mut b)?,
        Experiment::SiegelSharpness => siegel_sharpness(cfg, &mut b)?,
        Experiment::Curves => curves(cfg, &mut b)?,
    }
    Ok(ResultBundle {
        config: cfg.clone(),
        tables: b.tables,
        summary: b.summary,
        provenance: b.provenance,
        wall_time_s: start.elapsed().as_secs_f64(),
        artifact_version: ARTIFACT_VERSION,
    })
}

fn require_converged(r: &ConjugacyResult, max_n: usize) -> Result<(), RunError> {
    if r.converged {
        return Ok(());
    }
    Err(RunError {
        module: "conjugacy",
        message: format!("{} nodes did not converge within {max_n} iterations", r.diagnostics.unconverged_nodes),
    })
}

fn conjugate(cfg: &ExperimentConfig, map: &dyn PlanarMap, grid: &Grid2D, opts: &LimitOptions) -> Result<(ConjugacyResult, &'static str), RunError> {
    let (r, op) = match cfg.map.domain {
        DomainKind::PoincareContraction => (tri!("conjugacy", linearize_poincare_with(map, grid, opts)), "conjugacy::linearize_poincare"),
        _ => (tri!("conjugacy", linearize_siegel_with(map, grid, opts)), "conjugacy::linearize_siegel"),
    };
    require_converged(&r, opts.max_n)?;
    Ok((r, op))
}

fn linearize(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    let map = build_map(cfg)?;
    let grid = square_grid(cfg, map.as_ref())?;
    let (r, op) = conjugate(cfg, map.as_ref(), &grid, &limit_options(cfg))?;
    let mut phi = Table::new("phi", &["x1", "x2", "phi1", "phi2"]);
    for (x, v) in grid.points().zip(r.phi.values()) {
        phi.push(vec![num(x[0]), num(x[1]), num(v[0]), num(v[1])]);
    }
    b.table(phi, op);
    let mut cauchy = Table::new("cauchy", &["step", "sup_difference"]);
    for (n, h) in r.cauchy_history.iter().enumerate() {
        cauchy.push(vec![(n + 1).to_string(), num(*h)]);
    }
    b.table(cauchy, op);
    b.set("converged", r.converged, op);
    b.set("iterations", r.iterations, op);
    b.set("residual_sup", r.residual_sup, op);
    b.set("geometric_ratio", r.diagnostics.geometric_ratio, "conjugacy::fit_geometric_ratio");
    b.set("unconverged_nodes", r.diagnostics.unconverged_nodes, op);
    if let Some(eta) = map.nonlinearity_bound() {
        b.set("eta", eta, "maps::PlanarMap::nonlinearity_bound");
        if cfg.map.domain == DomainKind::PoincareContraction {
            let p = cfg.map.params;
            let bound = (p.lambda2.abs() + eta).powf(1.0 + p.alpha) / p.lambda2.abs();
            b.set("ratio_bound", bound, "maps::PlanarMap::nonlinearity_bound");
        }
    }
    Ok(())
}

fn flatten(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    let map = build_map(cfg)?;
    let opts = FlattenOptions { radius: cfg.grid.extent, axis_nodes: cfg.grid.axis_nodes, ..FlattenOptions::default() };
    match cfg.map.domain {
        DomainKind::PoincareContraction => {
            let op = "manifolds::flatten_poincare";
            let (flat, t) = tri!("manifolds", flatten_poincare(map, &opts));
            let grid = tri!("grid", Grid2D::square(0.9 * opts.radius.unwrap_or(t.psi.grid().x_max), cfg.grid.resolution.min(101)));
            let mut theta = Table::new("theta", &["x1", "x2", "theta1", "theta2", "flat1", "flat2"]);
            for x in grid.points() {
                let y = tri!("manifolds", t.theta.forward(x));
                let f = tri!("manifolds", flat.eval(x));
                theta.push(vec![num(x[0]), num(x[1]), num(y[0]), num(y[1]), num(f[0]), num(f[1])]);
            }
            b.table(theta, op);
            let mut graph = Table::new("graph", &["s", "g"]);
            for (s, g) in t.graph.g.grid.nodes().iter().zip(&t.graph.g.values) {
                graph.push(vec![num(*s), num(*g)]);
            }
            b.table(graph, "manifolds::compute_invariant_graph");
            b.set("kind", format!("{:?}", t.kind), op);
            b.set("axis_residual", t.report.axis_residual, op);
            b.set("second_residual", t.report.second_residual, op);
            b.set("round_trip", t.report.round_trip, op);
            b.set("origin_defect", t.report.origin_defect, op);
            b.set("graph_invariance_defect", t.graph.invariance_defect, "manifolds::compute_invariant_graph");
        }
        _ => {
            let op = "manifolds::flatten_siegel";
            let out = tri!("manifolds", flatten_siegel(map, &opts, cfg.map.params.alpha));
            jets_table(b, &out.jets, op);
            b.set("straightening", format!("{:?}", out.axes.kind), "manifolds::straighten_siegel_axes");
            b.set("straightened_axis_residual", out.axes.axis_residual, "manifolds::straighten_siegel_axes");
            b.set("psi_star_identity", out.psi_star.identity, "whitney::assemble_psi_star");
            b.set("axis_residual", out.verification.axis_residual, "whitney::assemble_psi_star");
            b.set("jacobian_residual", out.verification.jacobian_residual, "whitney::assemble_psi_star");
            b.set("origin_defect", out.verification.origin_defect, "whitney::assemble_psi_star");
        }
    }
    Ok(())
}

fn jets_table(b: &mut Builder, sol: &JetSolution, op: &str) {
    let j = &sol.jets;
    let mut t = Table::new("jets", &["axis", "s", "d11", "d12", "d21", "d22"]);
    for (k, s) in j.p11.grid.nodes().iter().enumerate() {
        t.push(vec!["x1".into(), num(*s), num(j.p11.values[k]), num(j.p12.values[k]), num(0.0), num(j.p22.values[k])]);
    }
    for (k, s) in j.q22.grid.nodes().iter().enumerate() {
        t.push(vec!["x2".into(), num(*s), num(j.q11.values[k]), num(0.0), num(j.q21.values[k]), num(j.q22.values[k])]);
    }
    b.table(t, op);
}

fn solve_map_jets(cfg: &ExperimentConfig, map: &MapRef) -> Result<JetSolution, RunError> {
    let g = axis_grid(cfg, map.as_ref())?;
    Ok(tri!("funceq", solve_jets(map.clone(), &g, &g, cfg.map.params.alpha, cfg.tol.min(1e-12), cfg.max_iter.max(2000))))
}

fn funceq(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    let map = build_map(cfg)?;
    let sol = solve_map_jets(cfg, &map)?;
    jets_table(b, &sol, "funceq::solve_jets");
    let mut t = Table::new("contraction", &["axis", "equation", "iterations", "residual", "measured_factor", "theoretical_factor"]);
    for (axis, sys) in [("x1", &sol.x1), ("x2", &sol.x2)] {
        for (name, s) in [("p11", &sys.p11), ("p12", &sys.p12), ("p22", &sys.p22)] {
            let r = &s.report;
            t.push(vec![
                axis.into(),
                name.into(),
                r.iterations.to_string(),
                num(r.residual),
                num(r.measured_factor),
                num(r.theoretical_factor),
            ]);
        }
    }
    b.table(t, "funceq::solve_fe_diag, funceq::solve_fe_offdiag");
    let worst = sol.x1.residuals().into_iter().chain(sol.x2.residuals()).fold(0.0, f64::max);
    b.set("max_equation_residual", worst, "funceq::AxisSystem::residuals");
    let g = &sol.jets.p11.grid;
    let samples: Vec<f64> = g.nodes().into_iter().step_by(g.n.div_ceil(201).max(1)).collect();
    let m = tri!("funceq", jet_matrix_residual(map.as_ref(), &sol.jets, &samples));
    b.set("jet_matrix_residual", m, "funceq::jet_matrix_residual");
    b.set("seminorms", sol.jets.seminorms(), "funceq::AxisJets::seminorms");
    Ok(())
}

fn whitney(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    let map = build_map(cfg)?;
    let sol = solve_map_jets(cfg, &map)?;
    let (first, second) = tri!("whitney", jet_from_axis_data(&sol.jets));
    let radius = first.x1_axis.grid.radius().min(first.x2_axis.grid.radius());
    let target = tri!("grid", Grid2D::square(0.5 * radius, cfg.grid.resolution));
    let alpha = cfg.map.params.alpha;
    let op = "whitney::whitney_extend";
    let h1 = whitney_extend(&first, &target, alpha);
    let h2 = whitney_extend(&second, &target, alpha);
    let mut t = Table::new("extension", &["x1", "x2", "h1", "dh1_dx1", "dh1_dx2", "h2", "dh2_dx1", "dh2_dx2"]);
    for (k, x) in target.points().enumerate() {
        let (a, ga, c, gc) = (h1.value.values()[k], h1.gradient.values()[k], h2.value.values()[k], h2.gradient.values()[k]);
        t.push(vec![num(x[0]), num(x[1]), num(a), num(ga[0]), num(ga[1]), num(c), num(gc[0]), num(gc[1])]);
    }
    b.table(t, op);
    let mut cases = Table::new("whitney_cases", &["component", "case", "pairs", "r00", "r10", "r01"]);
    let mut constants = Vec::new();
    for (name, jet, seed) in [("h1", &first, cfg.seed), ("h2", &second, cfg.seed.wrapping_add(1))] {
        let check = check_whitney_conditions(jet, 8000, seed);
        constants.push(check.constant());
        for c in &check.cases {
            cases.push(vec![name.into(), format!("{:?}", c.case), c.pairs.to_string(), num(c.r00), num(c.r10), num(c.r01)]);
        }
    }
    b.table(cases, "whitney::check_whitney_conditions");
    b.set("whitney_constants", constants, "whitney::check_whitney_conditions");
    b.set("cube_count", [h1.cube_count, h2.cube_count], op);
    b.set("weight_defect", h1.weight_defect.max(h2.weight_defect), op);
    b.set("attained_holder_constant", [h1.attained_holder_constant, h2.attained_holder_constant], op);
    b.set("fallbacks", h1.fallbacks + h2.fallbacks, op);
    Ok(())
}

fn estimate(cfg: &ExperimentConfig, field: &linlab_core::MatrixField2D) -> Result<HolderEstimate, RunError> {
    let sc = SamplerConfig { seed: cfg.seed, quantile: cfg.quantile, pairs_per_bin: cfg.pairs_per_bin, ..SamplerConfig::default() };
    Ok(tri!("holder", estimate_holder_exponent(field, &sc)))
}

fn bins_table(b: &mut Builder, e: &HolderEstimate) {
    let mut t = Table::new("bins", &["distance", "envelope", "pairs"]);
    for bin in &e.bins {
        t.push(vec![num(bin.distance), num(bin.envelope), bin.pairs.to_string()]);
    }
    b.table(t, "holder::estimate_holder_exponent");
}

fn record_estimate(b: &mut Builder, e: &HolderEstimate) {
    let op = "holder::estimate_holder_exponent";
    b.set("beta_hat", e.beta_hat, op);
    b.set("raw_slope", e.raw_slope, op);
    b.set("regression_r2", e.regression_r2, op);
    b.set("distance_decades", e.distance_decades, op);
    b.set("pair_count", e.pair_count, op);
    b.set("degenerate", e.degenerate, op);
}

fn holder(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    let map = build_map(cfg)?;
    let grid = square_grid(cfg, map.as_ref())?;
    let mut opts = limit_options(cfg);
    opts.residual_stride = 0;
    let (r, op) = conjugate(cfg, map.as_ref(), &grid, &opts)?;
    b.set("converged", r.converged, op);
    let e = estimate(cfg, &r.dphi)?;
    bins_table(b, &e);
    record_estimate(b, &e);
    let d = tri!("spectral", derived_exponents(&cfg.map.params));
    b.set("beta_theory", d.beta, "spectral::derived_exponents");
    Ok(())
}

fn poincare_sharpness(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    if cfg.map.domain != DomainKind::PoincareContraction {
        return Err(RunError { module: "conjugacy", message: "poincare-sharpness needs Poincaré-domain eigenvalues".into() });
    }
    let map = build_map(cfg)?;
    let s = &cfg.sharpness;
    let top = 2f64.powi(-(s.k_min as i32));
    let n = (1usize << (s.k_max - s.k_min + 1)) + 1;
    let grid = tri!("grid", Grid2D::new(s.xi - 1e-3, s.xi + 1e-3, -top, top, 3, n));
    let mut opts = limit_options(cfg);
    opts.residual_stride = 0;
    opts.with_jacobian = false;
    let op = "conjugacy::linearize_poincare";
    let r = tri!("conjugacy", linearize_poincare_with(map.as_ref(), &grid, &opts));
    require_converged(&r, opts.max_n)?;
    let levels: Vec<f64> = (s.k_min..=s.k_max).map(|k| 2f64.powi(-(k as i32))).collect();
    let rows = tri!("conjugacy", one_sided_quotients(&r.phi.component(0), s.xi, &[Direction::FromAbove, Direction::FromBelow], &levels));
    let mut t = Table::new("quotients", &["direction", "k", "x2", "quotient"]);
    for row in &rows {
        let dir = if row.direction == Direction::FromAbove { "from-above" } else { "from-below" };
        let k = (-row.x2.abs().log2()).round() as i64;
        t.push(vec![dir.into(), k.to_string(), num(row.x2), num(row.quotient)]);
    }
    b.table(t, "conjugacy::one_sided_quotients");
    let above: Vec<f64> = rows.iter().filter(|r| r.direction == Direction::FromAbove).map(|r| r.quotient).collect();
    let below_max = rows.iter().filter(|r| r.direction == Direction::FromBelow).map(|r| r.quotient.abs()).fold(0.0, f64::max);
    let op_q = "conjugacy::one_sided_quotients";
    b.set("converged", r.converged, op);
    b.set("from_below_max_abs", below_max, op_q);
    b.set("from_above_min", above.iter().cloned().fold(f64::INFINITY, f64::min), op_q);
    b.set("from_above_decreasing_steps", above.windows(2).filter(|w| w[1] < w[0]).count(), op_q);
    let d = tri!("spectral", derived_exponents(&cfg.map.params));
    b.set("alpha0", d.alpha0, "spectral::derived_exponents");
    b.set("differentiable_only", d.beta.is_none(), "spectral::derived_exponents");
    Ok(())
}

fn siegel_sharpness(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    if cfg.map.domain != DomainKind::Siegel {
        return Err(RunError { module: "conjugacy", message: "siegel-sharpness needs Siegel-domain eigenvalues".into() });
    }
    let map = build_map(cfg)?;
    let grid = square_grid(cfg, map.as_ref())?;
    let mut opts = limit_options(cfg);
    opts.residual_stride = 0;
    let op = "conjugacy::linearize_siegel";
    let r = tri!("conjugacy", linearize_siegel_with(map.as_ref(), &grid, &opts));
    require_converged(&r, opts.max_n)?;
    b.set("converged", r.converged, op);
    let e = estimate(cfg, &r.dphi)?;
    bins_table(b, &e);
    record_estimate(b, &e);
    let theory = tri!("spectral", linlab_core::spectral::siegel_beta(&cfg.map.params));
    b.set("beta_theory", theory, "spectral::siegel_beta");

    let s = &cfg.sharpness;
    let lim = tri!("conjugacy", SiegelLimit::new(map.as_ref(), LimitOptions::new(1e-12, cfg.max_iter), cfg.map.outer_radius));
    let steps = s.decades * s.per_decade;
    let levels: Vec<f64> = (0..=steps).map(|j| s.omega * 10f64.powf(-(j as f64) / s.per_decade as f64)).collect();
    let betas = [theory - 0.1, theory, theory + 0.1];
    let rows = tri!(
        "holder",
        local_modulus(|x| lim.evaluate(x, true).ok().map(|v| v.jacobian), pt(s.xi, 0.0), pt(0.0, 1.0), &levels, &betas)
    );
    let p = cfg.map.params;
    let sigma = linlab_core::spectral::sigma(p.lambda1, p.lambda2);
    let mut t = Table::new("modulus", &["beta", "distance", "quotient", "n0"]);
    for row in &rows {
        let n0 = (row.distance / s.xi).ln() / p.lambda1.abs().ln() / (1.0 - sigma);
        t.push(vec![num(row.beta), num(row.distance), num(row.quotient), num(n0)]);
    }
    b.table(t, "holder::local_modulus on conjugacy::SiegelLimit");
    let op_m = "holder::modulus_growth";
    let above = modulus_growth(&rows, betas[2]);
    let below = modulus_growth(&rows, betas[0]);
    b.set("modulus_decades", above.map(|g| g.decades), op_m);
    b.set("trend_growth_above", above.map(|g| g.trend_growth), op_m);
    b.set("blow_up_above", above.map(|g| g.blows_up(10.0)), op_m);
    b.set("max_ratio_below", below.map(|g| g.max_ratio), op_m);
    b.set("bounded_below", below.map(|g| g.bounded(10.0)), op_m);
    Ok(())
}

fn curves(cfg: &ExperimentConfig, b: &mut Builder) -> Result<(), RunError> {
    let p = cfg.map.params;
    let figure = match cfg.figure {
        Some(id) => tri!("spectral", Figure::from_id(id)),
        None => tri!("spectral", Figure::for_params(&p)),
    };
    let d = tri!("spectral", derived_exponents(&p));
    let n = cfg.curve_samples;
    let mut alphas: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
    alphas.extend([d.alpha0, d.alpha1].into_iter().flatten().filter(|a| *a > 0.0 && *a <= 1.0));
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let op = "spectral::sharpness_curve";
    let pts = tri!("spectral", sharpness_curve(figure, &p, &alphas));
    let mut t = Table::new("curve", &["alpha", "beta", "flag"]);
    for c in &pts {
        let flag = match c.flag {
            CurveFlag::Sharp => "sharp",
            CurveFlag::DifferentiableOnly => "differentiable-only",
            CurveFlag::OpenEndpoint => "open-endpoint",
        };
        t.push(vec![num(c.alpha), c.beta.map(num).unwrap_or_default(), flag.into()]);
    }
    b.table(t, op);
    b.set("figure", figure.id(), "spectral::Figure::for_params");
    b.set("alpha0", d.alpha0, "spectral::derived_exponents");
    b.set("alpha1", d.alpha1, "spectral::derived_exponents");
    if d.domain == DomainKind::Siegel {
        b.set("slope", tri!("spectral", siegel_curve_slope(&p)), "spectral::siegel_curve_slope");
    }
    Ok(())
}
