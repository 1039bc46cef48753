use momentsplat::warp::WarpConfig;
use proptest::prelude::*;

fn config() -> impl Strategy<Value = WarpConfig> {
    // The unbounded mode needs a saturating transform (lambda < 0).
    (-3.0..0.9f64, 0.001..1.0f64, prop::option::of(0.5..200.0f64)).prop_map(|(lambda, near, span)| match span {
        Some(s) => WarpConfig::new(lambda, near, near + s).unwrap(),
        None => WarpConfig::new(lambda.min(-0.05), near, f64::INFINITY).unwrap(),
    })
}

fn interior(w: &WarpConfig, u: f64) -> f64 {
    if w.is_unbounded() {
        w.near() + u / (1.0 - u)
    } else {
        w.near() + u * (w.far() - w.near())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn warp_maps_interior_into_unit_interval(w in config(), u in 0.001..0.999f64) {
        let t = interior(&w, u);
        let g = w.warp(t);
        prop_assert!(g > 0.0 && g < 1.0, "warp({t}) = {g}");
        prop_assert!(w.warp_deriv(t) > 0.0);
        prop_assert_eq!(w.warp(w.near()), 0.0);
    }

    #[test]
    fn unwarp_inverts_warp(w in config(), u in 0.001..0.99f64) {
        let t = interior(&w, u);
        let back = w.unwarp(w.warp(t));
        prop_assert!((back - t).abs() <= 1e-8 * t.max(1.0), "{t} -> {back}");
    }

    #[test]
    fn derivative_matches_finite_difference(w in config(), u in 0.01..0.9f64) {
        let t = interior(&w, u);
        let h = 1e-6 * t.max(1e-3);
        let fd = (w.warp(t + h) - w.warp(t - h)) / (2.0 * h);
        let d = w.warp_deriv(t);
        prop_assert!((fd - d).abs() <= 1e-5 * d.max(1e-12) + 1e-9, "fd {fd} vs {d}");
    }

    #[test]
    fn default_warp_saturates(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let w = WarpConfig::default();
        let (a, b) = (interior(&w, a.min(b)), interior(&w, a.max(b)));
        prop_assert!(w.warp_deriv(a) >= w.warp_deriv(b));
    }
}

#[test]
fn unbounded_warp_rejects_growing_transform() {
    assert!(WarpConfig::new(0.5, 0.01, f64::INFINITY).is_err());
}

#[test]
fn bounded_warp_reaches_one_at_far() {
    let w = WarpConfig::new(-1.5, 0.01, 10.0).unwrap();
    assert!((w.warp(10.0) - 1.0).abs() < 1e-12);
}
