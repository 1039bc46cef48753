use momentsplat::moments::MomentKind;
use momentsplat::oracle::{exact_optical_depth, oracle_moments, oracle_radiance, OracleConfig, WarpMode};
use momentsplat::scene::{Gaussian1, Ray, Scene};
use momentsplat::selftest::{overlapping_ray, random_particle};
use momentsplat::synthetic::six_gaussians;
use momentsplat::warp::WarpConfig;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};

fn mixture(seed: u64) -> Vec<Gaussian1> {
    let mut rng = StdRng::seed_from_u64(seed);
    let count = rng.random_range(1..=6);
    (0..count).map(|_| random_particle(&mut rng, WarpConfig::default().near())).collect()
}

#[test]
fn radiance_ignores_list_order() {
    let mut rng = StdRng::seed_from_u64(3);
    let cfg = OracleConfig::default();
    for _ in 0..4 {
        let (scene, ray) = overlapping_ray(&mut rng).unwrap();
        let a = oracle_radiance(&scene, &ray, &cfg).unwrap();
        let mut gs = scene.gaussians.clone();
        gs.shuffle(&mut rng);
        let b = oracle_radiance(&Scene::new(gs, scene.background).unwrap(), &ray, &cfg).unwrap();
        assert!((a.rgb - b.rgb).amax() <= 1e-12, "{:?} vs {:?}", a.rgb, b.rgb);
        assert!((a.alpha - b.alpha).abs() <= 1e-12);
    }
}

#[test]
fn radiance_of_empty_ray_is_background() {
    let scene = Scene::new(Vec::new(), Vector3::new(0.2, 0.3, 0.4)).unwrap();
    let ray = Ray::new(Vector3::zeros(), Vector3::z(), 0.01, f64::INFINITY).unwrap();
    let r = oracle_radiance(&scene, &ray, &OracleConfig::default()).unwrap();
    assert_eq!(r.alpha, 0.0);
    assert!((r.rgb - scene.background).norm() < 1e-15);
}

#[test]
fn bundled_scene_converges() {
    let scene = six_gaussians();
    let ray = Ray::new(Vector3::new(0.0, 0.0, -5.0), Vector3::z(), 0.01, f64::INFINITY).unwrap();
    let r = oracle_radiance(&scene, &ray, &OracleConfig::default()).unwrap();
    assert!(r.converged && r.alpha > 0.0 && r.alpha < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn depth_is_nondecreasing(seed in any::<u64>(), a in 0.0..60.0f64, b in 0.0..60.0f64) {
        let g1s = mixture(seed);
        let near = WarpConfig::default().near();
        let (lo, hi) = (near + a.min(b), near + a.max(b));
        prop_assert!(exact_optical_depth(&g1s, lo, near) <= exact_optical_depth(&g1s, hi, near));
    }

    #[test]
    fn zeroth_quadrature_moment_is_total_depth(seed in any::<u64>()) {
        let warp = WarpConfig::default();
        let g1s = mixture(seed);
        let m = oracle_moments(&g1s, &warp, MomentKind::Power { n: 2 }, WarpMode::Exact, &OracleConfig::default()).unwrap();
        let exact = exact_optical_depth(&g1s, warp.far(), warp.near());
        prop_assert!((m.m0() - exact).abs() <= 1e-10 * exact.max(1.0));
    }
}
