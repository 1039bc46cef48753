use momentsplat::bounds::{BiasSchedule, Bounds};
use momentsplat::moments::{particle_moments, MomentAccumulator, MomentKind, SumPolicy, DEFAULT_THETA};
use momentsplat::oracle::{exact_optical_depth, oracle_moments, OracleConfig, WarpMode};
use momentsplat::scene::Gaussian1;
use momentsplat::selftest::{atomic_moments, random_atoms, random_particle};
use momentsplat::synthetic::{default_camera, six_gaussians};
use momentsplat::warp::WarpConfig;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

const POWER: MomentKind = MomentKind::Power { n: 4 };
const TRIG: MomentKind = MomentKind::Trig { n: 4, theta: DEFAULT_THETA };

fn mixture(seed: u64) -> Vec<Gaussian1> {
    let mut rng = StdRng::seed_from_u64(seed);
    let count = rng.random_range(1..=6);
    (0..count).map(|_| random_particle(&mut rng, WarpConfig::default().near())).collect()
}

fn analytic_bounds(g1s: &[Gaussian1], kind: MomentKind) -> Bounds {
    let warp = WarpConfig::default();
    let mut acc = MomentAccumulator::new(kind, SumPolicy::Exact);
    for g in g1s {
        acc.add(&particle_moments(g, &warp, kind).unwrap()).unwrap();
    }
    Bounds::new(&acc.finish(), &BiasSchedule::default()).unwrap()
}

fn sweep() -> impl Iterator<Item = f64> {
    (0..64).map(|i| i as f64 / 63.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_moments_sandwich_the_depth(seed in any::<u64>()) {
        let warp = WarpConfig::default();
        let g1s = mixture(seed);
        let m = oracle_moments(&g1s, &warp, POWER, WarpMode::Exact, &OracleConfig::default()).unwrap();
        let b = Bounds::new(&m, &BiasSchedule::default()).unwrap();
        let tol = 1e-6 * (1.0 + m.m0());
        for i in 0..64 {
            let eta = (i as f64 + 0.5) / 64.0;
            let tau = exact_optical_depth(&g1s, warp.unwarp(eta), warp.near());
            let e = b.estimate(eta, 0.0);
            prop_assert!(e.lower <= tau + tol && tau <= e.upper + tol, "eta {eta}: {} <= {tau} <= {}", e.lower, e.upper);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extremes_pin_the_bounds(seed in any::<u64>()) {
        let g1s = mixture(seed);
        for kind in [POWER, TRIG] {
            let b = analytic_bounds(&g1s, kind);
            let m0 = b.mass();
            prop_assert!(b.estimate(0.0, 0.0).lower.abs() <= 1e-6 * (1.0 + m0));
            prop_assert!((b.estimate(1.0, 0.0).upper - m0).abs() <= 1e-6 * (1.0 + m0));
        }
    }

    #[test]
    fn power_bounds_are_monotone(seed in any::<u64>()) {
        let b = analytic_bounds(&mixture(seed), POWER);
        // Raw bounds of the biased measure are exactly monotone; removing the
        // uniform reference can lower them by at most its slope per step.
        let slack = b.bias() * b.mass() / 63.0 / (1.0 - b.bias()) + 1e-12 * (1.0 + b.mass());
        let raw: Vec<_> = sweep().map(|eta| b.split_at(eta).unwrap()).collect();
        for w in raw.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 - 1e-12 && w[1].1 >= w[0].1 - 1e-12);
        }
        let est: Vec<_> = sweep().map(|eta| b.estimate(eta, 0.0)).collect();
        for w in est.windows(2) {
            prop_assert!(w[1].lower >= w[0].lower - slack && w[1].upper >= w[0].upper - slack);
        }
    }

    #[test]
    fn lower_never_exceeds_upper(seed in any::<u64>(), beta in 0.0..1.0f64) {
        for kind in [POWER, TRIG] {
            let b = analytic_bounds(&mixture(seed), kind);
            for eta in sweep() {
                let e = b.estimate(eta, beta);
                prop_assert!(e.lower <= e.upper + 1e-12);
                prop_assert!(e.tau >= e.lower - 1e-12 && e.tau <= e.upper + 1e-12);
            }
        }
    }

    #[test]
    fn atoms_are_recovered(seed in any::<u64>(), count in 1usize..=5) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (xs, ws) = random_atoms(&mut rng, count, 0.05);
        for kind in [POWER, TRIG] {
            let b = Bounds::new(&atomic_moments(&xs, &ws, kind).unwrap(), &BiasSchedule::minimal()).unwrap();
            let mut below = 0.0;
            for (x, w) in xs.iter().zip(&ws) {
                let e = b.estimate(*x, 0.0);
                prop_assert!((e.lower - below).abs() <= 1e-5, "{kind:?} lower at {x}");
                prop_assert!((e.upper - below - w).abs() <= 1e-5, "{kind:?} upper at {x}");
                below += w;
            }
        }
    }

    #[test]
    fn canonical_measure_reproduces_moments(seed in any::<u64>(), eta in 0.05..0.95f64) {
        let b = analytic_bounds(&mixture(seed), POWER);
        let Bounds::Power(p) = &b else { panic!("power bounds expected") };
        let c = b.canonical(eta).unwrap();
        prop_assert!((c.points[0] - eta).abs() <= 1e-9);
        let biased = p.moments();
        prop_assert!(c.weights.iter().all(|w| *w >= -1e-9));
        // n + 1 atoms with one fixed at eta match every moment but the top one.
        for (k, target) in biased.iter().enumerate().take(biased.len() - 1) {
            let got: f64 = c.points.iter().zip(&c.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            prop_assert!((got - target).abs() <= 1e-6 * (1.0 + biased[0]), "k {k}: {got} vs {target}");
        }
    }
}

/// Trigonometric bounds are not exactly monotone: atoms of the canonical
/// measure can fall on either side of the phase origin. The dips stay small
/// relative to the pixel's mass.
#[test]
fn trig_bounds_nearly_monotone_on_reference_pixel() {
    let scene = six_gaussians();
    let cam = default_camera(64, 64).unwrap();
    let warp = WarpConfig::default();
    let ray = cam.pixel_ray(32, 32, warp.near(), warp.far()).unwrap();
    let g1s = scene.project(&ray).unwrap();
    let b = analytic_bounds(&g1s, TRIG);
    assert!(b.mass() > 0.0);
    let est: Vec<_> = sweep().map(|eta| b.estimate(eta, 0.0)).collect();
    let worst = est
        .windows(2)
        .map(|w| (w[0].lower - w[1].lower).max(w[0].upper - w[1].upper))
        .fold(0.0f64, f64::max);
    assert!(worst <= 1e-3 * b.mass(), "largest dip {worst}");
    assert!(est[63].upper >= est[0].upper && est[63].lower >= est[0].lower);
}

#[test]
fn empty_moments_give_empty_bounds() {
    let m = MomentAccumulator::new(POWER, SumPolicy::Exact).finish();
    let b = Bounds::new(&m, &BiasSchedule::default()).unwrap();
    let e = b.estimate(0.5, 0.25);
    assert_eq!((e.lower, e.upper, e.transmittance), (0.0, 0.0, 1.0));
}
