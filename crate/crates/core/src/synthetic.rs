//! The bundled test scene: six intersecting anisotropic Gaussians with
//! distinct colours, and a camera framing them.

use nalgebra::{UnitQuaternion, Vector3};

use crate::camera::Camera;
use crate::error::Result;
use crate::scene::{Gaussian3, Scene};
use crate::sh::ShCoeffs;

fn quat(axis: [f64; 3], degrees: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(
        &nalgebra::Unit::new_normalize(Vector3::from(axis)),
        degrees.to_radians(),
    );
    let q = q.quaternion();
    [q.w, q.i, q.j, q.k]
}

pub fn six_gaussians() -> Scene {
    let params: [(f64, [f64; 3], [f64; 3], [f64; 4], [f64; 3]); 6] = [
        (2.5, [-0.6, 0.0, 0.0], [1.0, 0.3, 0.4], quat([0.0, 0.0, 1.0], 30.0), [0.9, 0.2, 0.15]),
        (2.0, [0.6, 0.1, 0.2], [0.35, 1.0, 0.3], quat([1.0, 0.0, 0.0], 20.0), [0.2, 0.85, 0.25]),
        (3.0, [0.0, -0.5, -0.3], [0.8, 0.25, 0.5], quat([0.0, 1.0, 0.0], 45.0), [0.15, 0.3, 0.95]),
        (1.5, [0.1, 0.5, 0.4], [0.5, 0.5, 0.9], quat([1.0, 1.0, 0.0], 40.0), [0.95, 0.85, 0.1]),
        (4.0, [-0.3, 0.3, -0.6], [0.2, 0.7, 0.6], quat([0.3, -1.0, 0.5], 60.0), [0.1, 0.9, 0.9]),
        (1.2, [0.4, -0.2, 0.6], [0.6, 0.2, 0.8], quat([1.0, 0.0, 1.0], -35.0), [0.9, 0.2, 0.85]),
    ];
    let gaussians = params
        .iter()
        .map(|(w, mean, scale, rot, color)| {
            Gaussian3::new(*w, Vector3::from(*mean), *rot, Vector3::from(*scale), ShCoeffs::constant(*color))
                .expect("bundled primitives are valid")
        })
        .collect();
    Scene::new(gaussians, Vector3::new(0.05, 0.05, 0.08)).expect("bundled scene is valid")
}

/// Looks at the origin from `-z`, image `y` pointing down.
pub fn default_camera(width: usize, height: usize) -> Result<Camera> {
    Camera::look_at(
        Vector3::new(0.0, 0.0, -5.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        1.1 * width.max(height) as f64,
        width,
        height,
    )
}
