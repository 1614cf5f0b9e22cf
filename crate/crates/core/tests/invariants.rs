use linlab_core::conjugacy::{linearize_poincare, linearize_siegel};
use linlab_core::holder::{estimate_holder_exponent, SamplerConfig};
use linlab_core::maps::{
    bump, make_poincare_counterexample, make_siegel_counterexample, u, AxisShear, CoordinateChange, LinearMap,
};
use linlab_core::spectral::{
    derived_exponents, normalize, sharpness_curve, siegel_curve_slope, CurveFlag, Figure,
};
use linlab_core::whitney::{JetOnCross, WhitneyExtension};
use linlab_core::*;
use proptest::prelude::*;

fn contracting() -> impl Strategy<Value = (f64, f64)> {
    (0.05f64..0.95, 0.05f64..0.95)
        .prop_filter("distinct moduli", |(a, b)| (a - b).abs() > 1e-3)
        .prop_map(|(a, b)| if a < b { (a, b) } else { (b, a) })
}

fn saddle() -> impl Strategy<Value = (f64, f64)> {
    (0.1f64..0.9, 1.1f64..6.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn thresholds_are_linked((l1, l2) in contracting()) {
        let d = derived_exponents(&SpectralParams::new(l1, l2, 1.0)).unwrap();
        let (a0, a1) = (d.alpha0.unwrap(), d.alpha1.unwrap());
        prop_assert!(0.0 < a0 && a0 < a1);
        prop_assert!((a0 - a1 / (1.0 + a1)).abs() < 1e-12);
    }

    #[test]
    fn normalization_keeps_thresholds((l1, l2) in contracting(), swap in any::<bool>(), invert in any::<bool>()) {
        let base = derived_exponents(&SpectralParams::new(l1, l2, 1.0)).unwrap();
        let (mut a, mut b) = if swap { (l2, l1) } else { (l1, l2) };
        if invert {
            a = 1.0 / a;
            b = 1.0 / b;
        }
        let n = normalize(&SpectralParams::new(a, b, 1.0)).unwrap();
        prop_assert_eq!(n.inverted, invert);
        prop_assert_eq!(n.swapped, swap);
        let d = derived_exponents(&SpectralParams::new(a, b, 1.0)).unwrap();
        prop_assert!((d.alpha0.unwrap() - base.alpha0.unwrap()).abs() < 1e-12);
        prop_assert!((d.alpha1.unwrap() - base.alpha1.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn poincare_curve_shape((l1, l2) in contracting(), alpha in 0.001f64..=1.0) {
        let p = SpectralParams::new(l1, l2, 1.0);
        let fig = Figure::for_params(&p).unwrap();
        let c = sharpness_curve(fig, &p, &[alpha]).unwrap()[0];
        let d = derived_exponents(&p).unwrap();
        match c.beta {
            None => {
                prop_assert_eq!(c.flag, CurveFlag::DifferentiableOnly);
                prop_assert!(alpha <= d.alpha0.unwrap());
            }
            Some(beta) => {
                prop_assert!(beta > 0.0 && beta <= alpha + 1e-12, "{} {}", alpha, beta);
            }
        }
    }

    #[test]
    fn siegel_curve_is_linear((l1, l2) in saddle(), alpha in 0.01f64..=1.0) {
        let p = SpectralParams::new(l1, l2, alpha);
        let fig = Figure::for_params(&p).unwrap();
        let c = sharpness_curve(fig, &p, &[alpha]).unwrap()[0];
        let slope = siegel_curve_slope(&p).unwrap();
        prop_assert!(slope > 0.0 && slope < 1.0);
        prop_assert!((c.beta.unwrap() - slope * alpha).abs() < 1e-12);
        prop_assert!((derived_exponents(&p).unwrap().beta.unwrap() - slope * alpha).abs() < 1e-12);
    }

    #[test]
    fn switch_is_a_symmetric_unit_interval_map(x1 in -1.0f64..1.0, x2 in -1.0f64..1.0) {
        prop_assume!(x1 != 0.0 || x2 != 0.0);
        let v = u(x1, x2).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, u(x1, -x2).unwrap());
        if x1 >= x2.abs() {
            prop_assert_eq!(v, 1.0);
        }
        if x1 <= 0.0 {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn bump_profile_bounds(r in 0.0f64..0.5, th in 0.0f64..6.3) {
        let p = BumpProfile::default();
        let x = pt(r * th.cos(), r * th.sin());
        let b = bump(x, &p);
        prop_assert!((0.0..=1.0).contains(&b));
        if r <= p.inner_radius {
            prop_assert_eq!(b, 1.0);
        }
        if r >= p.outer_radius {
            prop_assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn counterexamples_invert(x1 in -0.3f64..0.3, x2 in -0.3f64..0.3) {
        let f = make_poincare_counterexample(SpectralParams::new(0.25, 0.5, 0.4), BumpProfile::default()).unwrap();
        let g = make_siegel_counterexample(SpectralParams::new(0.5, 2.0, 1.0), BumpProfile::default()).unwrap();
        let x = pt(x1, x2);
        for m in [&f as &dyn PlanarMap, &g] {
            prop_assert!(m.has_inverse());
            let y = m.eval(x).unwrap();
            prop_assert!((m.inverse(y).unwrap() - x).amax() < 1e-12 * (1.0 + x.amax()));
        }
    }

    #[test]
    fn shear_round_trip(c1 in -1.5f64..1.5, c2 in -1.5f64..1.5, x1 in -0.3f64..0.3, x2 in -0.3f64..0.3) {
        let t = AxisShear::new(c1, c2, 0.1, 0.2).unwrap();
        let x = pt(x1, x2);
        prop_assert!((t.backward(t.forward(x).unwrap()).unwrap() - x).amax() < 1e-12);
        prop_assert!((t.forward(t.backward(x).unwrap()).unwrap() - x).amax() < 1e-12);
    }

    #[test]
    fn linear_maps_linearize_trivially((l1, l2) in contracting(), (s1, s2) in saddle()) {
        let g = Grid2D::square(0.05, 9).unwrap();
        let p = linearize_poincare(&LinearMap::new(l1, l2), &g, 1e-12, 20).unwrap();
        let s = linearize_siegel(&LinearMap::new(s1, s2), &g, 1e-12, 20).unwrap();
        for r in [&p, &s] {
            prop_assert!(r.converged && r.iterations == 1);
            for (v, x) in r.phi.values().iter().zip(g.points()) {
                prop_assert!((v - x).amax() < 1e-15);
            }
        }
    }

    #[test]
    fn whitney_reproduces_affine_functions(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, x1 in -0.5f64..0.5, x2 in -0.5f64..0.5) {
        let axis = AxisGrid::symmetric(0.5, 65).unwrap();
        let jet = JetOnCross::restrict(axis, axis, 1.0, |x| c1 * x[0] + c2 * x[1], |_| pt(c1, c2)).unwrap();
        let s = WhitneyExtension::new(jet).sample(pt(x1, x2));
        prop_assert!((s.value - (c1 * x1 + c2 * x2)).abs() < 1e-12);
        prop_assert!((s.gradient - pt(c1, c2)).amax() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn holder_slope_is_scale_invariant(b in 0.2f64..0.9, c in 0.01f64..100.0, seed in 0u64..1000) {
        let field = VectorField2D::from_fn(Grid2D::square(1.0, 129).unwrap(), |x| pt(norm(&x).powf(b), 0.0));
        let cfg = SamplerConfig { seed, pairs_per_bin: 2000, ..SamplerConfig::default() };
        let e = estimate_holder_exponent(&field, &cfg).unwrap();
        let s = estimate_holder_exponent(&field.map(|v| v * c), &cfg).unwrap();
        prop_assert!((e.beta_hat - s.beta_hat).abs() <= 1e-12, "{} {}", e.beta_hat, s.beta_hat);
    }
}
