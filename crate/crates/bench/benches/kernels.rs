use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use linlab_bench::{fstar, gstar};
use linlab_core::conjugacy::{linearize_poincare, LimitOptions, PointwiseConjugacy, SiegelLimit};
use linlab_core::funceq::solve_jets;
use linlab_core::holder::{estimate_holder_exponent, SamplerConfig};
use linlab_core::maps::u;
use linlab_core::whitney::{JetOnCross, WhitneyExtension};
use linlab_core::*;

fn switch(c: &mut Criterion) {
    c.bench_function("u", |b| b.iter(|| u(black_box(0.013), black_box(-0.021)).unwrap()));
}

fn iterate(c: &mut Criterion) {
    let f = fstar();
    c.bench_function("fstar_orbit_100", |b| {
        b.iter(|| {
            let mut x = pt(0.05, 0.03);
            for _ in 0..100 {
                x = f.eval_with_jacobian(black_box(x)).unwrap().0;
            }
            x
        })
    });
}

fn linearize(c: &mut Criterion) {
    let f = fstar();
    let g = Grid2D::square(0.05, 41).unwrap();
    c.bench_function("linearize_poincare_41", |b| b.iter(|| linearize_poincare(f.as_ref(), &g, 1e-10, 200).unwrap()));
    let m = gstar();
    let lim = SiegelLimit::new(m.as_ref(), LimitOptions::new(1e-12, 400), 0.2).unwrap();
    c.bench_function("siegel_point_limit", |b| b.iter(|| lim.evaluate(black_box(pt(0.02, 0.01)), true).unwrap()));
}

fn jets(c: &mut Criterion) {
    let m = gstar();
    let g = AxisGrid::symmetric(0.4, 401).unwrap();
    c.bench_function("solve_jets_gstar_401", |b| b.iter(|| solve_jets(m.clone(), &g, &g, 1.0, 1e-12, 2000).unwrap()));
}

fn whitney(c: &mut Criterion) {
    let axis = AxisGrid::symmetric(0.5, 201).unwrap();
    let jet = JetOnCross::restrict(axis, axis, 1.0, |x| x[0] * x[1] + x[0] * x[0], |x| pt(x[1] + 2.0 * x[0], x[0])).unwrap();
    let ext = WhitneyExtension::new(jet);
    c.bench_function("whitney_sample", |b| b.iter(|| ext.sample(black_box(pt(0.013, 0.21)))));
}

fn holder(c: &mut Criterion) {
    let field = VectorField2D::from_fn(Grid2D::square(1.0, 257).unwrap(), |x| pt(norm(&x).powf(0.5), 0.0));
    let cfg = SamplerConfig::default();
    let mut group = c.benchmark_group("holder");
    group.sample_size(10);
    group.bench_function("estimate_257", |b| b.iter(|| estimate_holder_exponent(&field, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, switch, iterate, linearize, jets, whitney, holder);
criterion_main!(benches);
