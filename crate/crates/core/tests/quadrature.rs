use momentsplat::bounds::{BiasSchedule, Bounds};
use momentsplat::moments::{particle_moments, MomentAccumulator, MomentKind, SumPolicy};
use momentsplat::oracle::{oracle_radiance, OracleConfig};
use momentsplat::quadrature::{gaussian_contribution, ExactDepth, MomentDepth, QuadratureConfig};
use momentsplat::scene::Gaussian1;
use momentsplat::selftest::{injected_radiance, overlapping_ray, random_particle};
use momentsplat::warp::WarpConfig;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

fn mixture(seed: u64) -> Vec<Gaussian1> {
    let mut rng = StdRng::seed_from_u64(seed);
    let count = rng.random_range(1..=5);
    (0..count).map(|_| random_particle(&mut rng, WarpConfig::default().near())).collect()
}

#[test]
fn injected_depth_converges_with_more_intervals() {
    let mut rng = StdRng::seed_from_u64(7);
    let ocfg = OracleConfig::default();
    for _ in 0..5 {
        let (scene, ray) = overlapping_ray(&mut rng).unwrap();
        let reference = oracle_radiance(&scene, &ray, &ocfg).unwrap().rgb;
        let errs: Vec<f64> = [2, 8, 32]
            .iter()
            .map(|&n| (injected_radiance(&scene, &ray, n).unwrap() - reference).norm())
            .collect();
        assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contributions_are_nonnegative(seed in any::<u64>(), beta in 0.0..1.0f64) {
        let warp = WarpConfig::default();
        let q = QuadratureConfig::default();
        let g1s = mixture(seed);
        let kind = MomentKind::Power { n: 4 };
        let mut acc = MomentAccumulator::new(kind, SumPolicy::Exact);
        for g in &g1s {
            acc.add(&particle_moments(g, &warp, kind).unwrap()).unwrap();
        }
        let m = acc.finish();
        let bounds = Bounds::new(&m, &BiasSchedule::default()).unwrap();
        let depth = MomentDepth { bounds: &bounds, warp: &warp, beta };
        for g in &g1s {
            let c = gaussian_contribution(&Vector3::repeat(1.0), g, &depth, warp.near(), warp.far(), &q);
            prop_assert!(c.opacity >= 0.0 && c.penalty >= 0.0);
            prop_assert!(c.rgb.iter().all(|v| *v >= 0.0));
        }
        let alpha = -(-m.m0()).exp_m1();
        prop_assert!((0.0..1.0).contains(&alpha));
    }

    #[test]
    fn exact_depth_of_one_particle_has_no_penalty(seed in any::<u64>(), n in 1usize..12) {
        let warp = WarpConfig::default();
        let q = QuadratureConfig::new(n, 3.0, 1e-4).unwrap();
        let g = mixture(seed)[0];
        let depth = ExactDepth { g1s: &[g], near: warp.near() };
        let c = gaussian_contribution(&Vector3::repeat(1.0), &g, &depth, warp.near(), warp.far(), &q);
        prop_assert!(c.penalty <= 1e-6, "penalty {}", c.penalty);
        prop_assert!(c.opacity <= 1.0 + 1e-12);
    }
}
