//! Pinhole cameras: pixel rays, world/camera transforms and frustum culling.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::{Gaussian3, Ray};

/// Bounding-sphere radius multiplier applied to the largest scale.
pub const DEFAULT_CULL_MARGIN: f64 = 3.0;

/// `x_cam = rotation * x_world + translation`; the camera looks down `+z`
/// with `+x` right and `+y` down in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    k_inv: Matrix3<f64>,
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig("image dimensions must be positive".into()));
        }
        let k = intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidConfig("intrinsics must be upper triangular".into()));
        }
        if (k[(2, 2)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("intrinsics must have K[2][2] = 1".into()));
        }
        let k_inv = k
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::InvalidConfig("intrinsics are singular".into()))?;
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > 1e-6 || rotation.determinant() < 0.0 {
            return Err(Error::InvalidConfig(
                "world_to_cam rotation is not a proper rotation".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("translation is not finite".into()));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
            k_inv,
        })
    }

    /// Square-pixel camera with the principal point at the image centre.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = (-up).cross(&z).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, rotation, translation, width, height)
    }

    pub fn k_inv(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<[f64; 2]> {
        if p_cam.z <= 0.0 {
            return None;
        }
        let h = self.intrinsics * p_cam;
        Some([h.x / h.z, h.y / h.z])
    }

    /// Unit camera-frame direction through continuous pixel coordinates.
    pub fn direction_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        (self.k_inv * Vector3::new(u, v, 1.0)).normalize()
    }

    /// World-space ray through the centre of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: usize, y: usize, near: f64, far: f64) -> Result<Ray> {
        let d = self.direction_camera(x as f64 + 0.5, y as f64 + 0.5);
        Ray::new(self.center(), self.rotation.transpose() * d, near, far)
    }

    /// Inward unit normals of the four side planes, all through the origin
    /// of the camera frame.
    fn side_planes(&self) -> [Vector3<f64>; 4] {
        let (w, h) = (self.width as f64, self.height as f64);
        let c = [
            self.k_inv * Vector3::new(0.0, 0.0, 1.0),
            self.k_inv * Vector3::new(w, 0.0, 1.0),
            self.k_inv * Vector3::new(w, h, 1.0),
            self.k_inv * Vector3::new(0.0, h, 1.0),
        ];
        let inside = self.k_inv * Vector3::new(w / 2.0, h / 2.0, 1.0);
        std::array::from_fn(|i| {
            let n = c[i].cross(&c[(i + 1) % 4]).normalize();
            if n.dot(&inside) < 0.0 {
                -n
            } else {
                n
            }
        })
    }
}

/// True when the sphere of radius `margin * max(scale)` around the mean
/// touches the view frustum.
pub fn bounding_sphere_cull(g: &Gaussian3, cam: &Camera, margin: f64) -> bool {
    let r = margin * g.max_scale();
    let p = cam.to_camera(&g.mean);
    if p.z < -r {
        return false;
    }
    cam.side_planes().iter().all(|n| n.dot(&p) >= -r)
}
