use momentsplat::camera::Camera;
use momentsplat::proxy::{confidence_proxy, ConfidenceProxy, ewa_proxy, signature_check, to_camera_frame, Footprint, PixelRect};
use momentsplat::scene::Gaussian3;
use momentsplat::selftest::{coverage, random_gaussian};
use nalgebra::{SymmetricEigen, Vector3};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

const C: f64 = 0.01;
const NEAR: f64 = 0.01;

fn camera() -> Camera {
    Camera::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 64.0, 64, 64).unwrap()
}

fn in_view(seed: u64) -> Gaussian3 {
    let mut rng = StdRng::seed_from_u64(seed);
    let z = rng.random_range(2.0..12.0);
    let mean = Vector3::new(rng.random_range(-0.4..0.4) * z, rng.random_range(-0.4..0.4) * z, z);
    random_gaussian(&mut rng, mean, (0.05, 1.0), (0.5, 5.0))
}

fn sorted_eigenvalues(m: nalgebra::Matrix3<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn confidence_rect_covers_the_level_set() {
    let cam = camera();
    let (mut visible, mut covered) = (0, 0);
    for seed in 0..100 {
        let g = in_view(seed);
        let rect = match confidence_proxy(&g, &cam, C, NEAR) {
            Ok(p) => p.footprint.rect(&cam),
            Err(_) => PixelRect::empty(),
        };
        let (v, cov) = coverage(&g, &cam, C, NEAR, &[rect]).unwrap();
        visible += v;
        covered += cov[0];
    }
    assert!(visible > 0);
    assert!(covered as f64 >= 0.99 * visible as f64, "{covered} of {visible}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_one_update_interlaces(seed in any::<u64>()) {
        let cam = camera();
        let g = in_view(seed);
        let p = confidence_proxy(&g, &cam, C, NEAR);
        prop_assume!(p.is_ok());
        let p = p.unwrap();
        let (_, a) = to_camera_frame(&g, &cam);
        let k_inv = cam.k_inv();
        let km = k_inv.transpose() * a * k_inv * p.kappa;
        let mu = sorted_eigenvalues(0.5 * (km + km.transpose()));
        let nu = sorted_eigenvalues(-p.conic);
        let tol = 1e-9 * mu.iter().chain(&nu).fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..3 {
            prop_assert!(nu[i] <= mu[i] + tol, "nu {nu:?} mu {mu:?}");
            if i + 1 < 3 {
                prop_assert!(mu[i] <= nu[i + 1] + tol, "nu {nu:?} mu {mu:?}");
            }
        }
    }

    #[test]
    fn boundary_points_lie_on_the_ellipse(seed in any::<u64>(), phi in 0.0..std::f64::consts::TAU) {
        let cam = camera();
        let g = in_view(seed);
        if let Ok(ConfidenceProxy { footprint: Footprint::Ellipse(e), .. }) = confidence_proxy(&g, &cam, C, NEAR) {
            prop_assert!((e.mahalanobis(&e.boundary_point(phi)) - 1.0).abs() <= 1e-8);
        }
        let e = ewa_proxy(&g, &cam).unwrap();
        prop_assert!((e.mahalanobis(&e.boundary_point(phi)) - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn ellipse_footprints_have_hyperbolic_signature(seed in any::<u64>()) {
        let cam = camera();
        if let Ok(p) = confidence_proxy(&in_view(seed), &cam, C, NEAR) {
            if let Footprint::Ellipse(_) = p.footprint {
                prop_assert_eq!(signature_check(&p.conic), [1, -1, -1]);
            }
        }
    }
}

#[test]
fn invalid_confidence_is_rejected() {
    let g = in_view(1);
    for c in [0.0, 1.0, -0.5] {
        assert!(confidence_proxy(&g, &camera(), c, NEAR).is_err());
    }
}
