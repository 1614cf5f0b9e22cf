//! Shared fixtures for the benchmarks in `benches/`.

use std::sync::Arc;

use linlab_core::maps::{make_poincare_counterexample, make_siegel_counterexample};
use linlab_core::{BumpProfile, MapRef, SpectralParams};

/// Poincaré counterexample at `(0.25, 0.5, 0.4)`.
pub fn fstar() -> MapRef {
    Arc::new(make_poincare_counterexample(SpectralParams::new(0.25, 0.5, 0.4), BumpProfile::default()).expect("valid parameters"))
}

/// Siegel counterexample at `(0.5, 2, 1)`.
pub fn gstar() -> MapRef {
    Arc::new(make_siegel_counterexample(SpectralParams::new(0.5, 2.0, 1.0), BumpProfile::default()).expect("valid parameters"))
}
