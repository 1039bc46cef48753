use momentsplat::oracle::density_3d;
use momentsplat::scene::{project_to_ray, Gaussian3, Ray};
use momentsplat::sh::ShCoeffs;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-r..r, -r..r, -r..r].prop_map(|[x, y, z]| Vector3::new(x, y, z))
}

fn quat() -> impl Strategy<Value = [f64; 4]> {
    [-1.0..1.0f64, -1.0..1.0, -1.0..1.0, -1.0..1.0].prop_filter("normalisable", |q| {
        q.iter().map(|v| v * v).sum::<f64>() > 0.01
    })
}

fn gaussian() -> impl Strategy<Value = Gaussian3> {
    (0.01..20.0f64, vec3(3.0), quat(), [0.05..2.0f64, 0.05..2.0, 0.05..2.0]).prop_map(|(w, m, q, s)| {
        Gaussian3::new(w, m, q, Vector3::from(s), ShCoeffs::constant([0.5; 3])).unwrap()
    })
}

fn direction() -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0).prop_filter("non-zero", |v| v.norm() > 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn ray_density_matches_volume_density(g in gaussian(), o in vec3(6.0), d in direction(), u in -4.0..4.0f64) {
        let ray = Ray::new(o, d, 0.0, f64::INFINITY).unwrap();
        let g1 = project_to_ray(&g, &ray).unwrap();
        let t = (g1.mean + u * g1.stddev).max(0.0);
        let err = (density_3d(&g, &ray.at(t)) - g1.density(t)).abs();
        prop_assert!(err <= 1e-10 * g1.amplitude.max(1.0), "error {err}");
    }

    #[test]
    fn rigid_motion_leaves_projection_unchanged(
        g in gaussian(),
        o in vec3(6.0),
        d in direction(),
        axis in direction(),
        angle in -3.0..3.0f64,
        shift in vec3(5.0),
    ) {
        let ray = Ray::new(o, d, 0.0, f64::INFINITY).unwrap();
        let r = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let moved = Gaussian3 {
            mean: r * g.mean + shift,
            rotation: r * g.rotation,
            ..g.clone()
        };
        let moved_ray = Ray::new(r * o + shift, r * d, 0.0, f64::INFINITY).unwrap();
        let a = project_to_ray(&g, &ray).unwrap();
        let b = project_to_ray(&moved, &moved_ray).unwrap();
        prop_assert!((a.amplitude - b.amplitude).abs() <= 1e-9 * a.amplitude.max(1.0));
        prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
        prop_assert!((a.stddev - b.stddev).abs() <= 1e-9 * a.stddev.max(1.0));
    }

    #[test]
    fn reversing_the_ray_keeps_spread(g in gaussian(), o in vec3(6.0), d in direction()) {
        let a = project_to_ray(&g, &Ray::new(o, d, 0.0, f64::INFINITY).unwrap()).unwrap();
        let b = project_to_ray(&g, &Ray::new(o, -d, 0.0, f64::INFINITY).unwrap()).unwrap();
        prop_assert!((a.stddev - b.stddev).abs() <= 1e-12 * a.stddev);
        prop_assert!((a.amplitude - b.amplitude).abs() <= 1e-12 * a.amplitude.max(1.0));
        prop_assert!((a.mean + b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
    }

    #[test]
    fn quaternion_sign_is_irrelevant(g in gaussian(), o in vec3(6.0), d in direction()) {
        let q = g.rotation.into_inner();
        let flipped = Gaussian3::new(
            g.weight,
            g.mean,
            [-q.w, -q.i, -q.j, -q.k],
            g.scale,
            g.sh.clone(),
        )
        .unwrap();
        let ray = Ray::new(o, d, 0.0, f64::INFINITY).unwrap();
        let a = project_to_ray(&g, &ray).unwrap();
        let b = project_to_ray(&flipped, &ray).unwrap();
        prop_assert!((a.stddev - b.stddev).abs() <= 1e-12 * a.stddev);
        prop_assert!((a.mean - b.mean).abs() <= 1e-12 * a.mean.abs().max(1.0));
    }
}
