//! Volumetric primitives, rays and the exact restriction of a 3D Gaussian
//! density to a ray.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::sh::ShCoeffs;

/// One anisotropic Gaussian extinction primitive.
///
/// The density is `weight * exp(-0.5 (x - mean)^T Σ^-1 (x - mean))` with
/// `Σ = R S S^T R^T`, `S = diag(scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3 {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub sh: ShCoeffs,
}

impl Gaussian3 {
    /// `rotation` is `(w, x, y, z)`; it is normalised here, once.
    pub fn new(
        weight: f64,
        mean: Vector3<f64>,
        rotation: [f64; 4],
        scale: Vector3<f64>,
        sh: ShCoeffs,
    ) -> Result<Self> {
        let q = Quaternion::new(rotation[0], rotation[1], rotation[2], rotation[3]);
        if !(q.norm() > 0.0) || !q.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidPrimitive(format!(
                "rotation quaternion {rotation:?} cannot be normalised"
            )));
        }
        let g = Self {
            weight,
            mean,
            rotation: UnitQuaternion::from_quaternion(q),
            scale,
            sh,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::InvalidPrimitive(format!(
                "weight {} must be finite and non-negative",
                self.weight
            )));
        }
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPrimitive("mean is not finite".into()));
        }
        check_scale(&self.scale)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    /// `Σ^-1` assembled from the factors (`R S^-2 R^T`), no matrix inverse.
    pub fn precision(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let inv = self.scale.map(|s| 1.0 / (s * s));
        r * Matrix3::from_diagonal(&inv) * r.transpose()
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }

    pub fn min_scale(&self) -> f64 {
        self.scale.min()
    }

    pub fn with_weight(&self, weight: f64) -> Self {
        Self {
            weight,
            ..self.clone()
        }
    }
}

fn check_scale(scale: &Vector3<f64>) -> Result<()> {
    if scale
        .iter()
        .any(|&s| !(s >= f64::MIN_POSITIVE) || !s.is_finite())
    {
        return Err(Error::InvalidPrimitive(format!(
            "scales must be positive normal numbers, got {:?}",
            scale.as_slice()
        )));
    }
    Ok(())
}

/// A camera ray `o + t d` restricted to `[near, far]`; `far` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    /// Normalises `dir`.
    pub fn new(origin: Vector3<f64>, dir: Vector3<f64>, near: f64, far: f64) -> Result<Self> {
        let len = dir.norm();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidConfig("ray direction has zero length".into()));
        }
        if !(near >= 0.0) || !(far > near) {
            return Err(Error::InvalidConfig(format!(
                "ray bounds must satisfy 0 <= near < far, got [{near}, {far}]"
            )));
        }
        Ok(Self {
            origin,
            dir: dir / len,
            near,
            far,
        })
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

/// A primitive's density along a ray: `amplitude * exp(-(t - mean)^2 / (2 stddev^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1 {
    pub amplitude: f64,
    pub mean: f64,
    pub stddev: f64,
}

impl Gaussian1 {
    pub fn new(amplitude: f64, mean: f64, stddev: f64) -> Self {
        debug_assert!(stddev > 0.0);
        Self {
            amplitude,
            mean,
            stddev,
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        let z = (t - self.mean) / self.stddev;
        self.amplitude * (-0.5 * z * z).exp()
    }

    /// Optical depth accumulated over `[a, b]`.
    pub fn optical_depth(&self, a: f64, b: f64) -> f64 {
        if b <= a || self.amplitude == 0.0 {
            return 0.0;
        }
        let k = std::f64::consts::FRAC_1_SQRT_2 / self.stddev;
        let (za, zb) = ((a - self.mean) * k, (b - self.mean) * k);
        let mass = erf_difference(za, zb);
        self.amplitude * self.stddev * (std::f64::consts::PI / 2.0).sqrt() * mass
    }

    /// Total optical depth over `[near, ∞)`.
    pub fn total_depth(&self, near: f64) -> f64 {
        self.optical_depth(near, f64::INFINITY)
    }
}

/// `erf(b) - erf(a)` for `a <= b`, evaluated through whichever tail keeps
/// relative precision.
pub fn erf_difference(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        libm::erfc(a) - libm::erfc(b)
    } else if b <= 0.0 {
        libm::erfc(-b) - libm::erfc(-a)
    } else {
        libm::erf(b) - libm::erf(a)
    }
}

/// Restricts `g`'s density to `ray`, exactly.
///
/// Works in the primitive's whitened frame: `o_g = S^-1 R^T (o - μ)`,
/// `d_g = S^-1 R^T d`.
pub fn project_to_ray(g: &Gaussian3, ray: &Ray) -> Result<Gaussian1> {
    check_scale(&g.scale)?;
    let rt = g.rotation.inverse();
    let inv_s = g.scale.map(|s| 1.0 / s);
    let o_g = (rt * (ray.origin - g.mean)).component_mul(&inv_s);
    let d_g = (rt * ray.dir).component_mul(&inv_s);
    let dd = d_g.dot(&d_g);
    let mean = -o_g.dot(&d_g) / dd;
    // K = -|o_g|^2/2 + (o_g.d_g)^2/(2 d_g.d_g): half the squared distance
    // from the whitened ray to the origin, taken as a perpendicular residual.
    let perp = o_g + d_g * mean;
    let k = -0.5 * perp.dot(&perp);
    Ok(Gaussian1 {
        amplitude: g.weight * k.exp(),
        mean,
        stddev: (1.0 / dd).sqrt(),
    })
}

/// Scene: primitives plus background radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3>,
    pub background: Vector3<f64>,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian3>, background: Vector3<f64>) -> Result<Self> {
        if background.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidConfig(
                "background radiance must be finite and non-negative".into(),
            ));
        }
        for g in &gaussians {
            g.validate()?;
        }
        Ok(Self {
            gaussians,
            background,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn project(&self, ray: &Ray) -> Result<Vec<Gaussian1>> {
        self.gaussians.iter().map(|g| project_to_ray(g, ray)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(w: f64, mean: [f64; 3], rot: [f64; 4], scale: [f64; 3]) -> Gaussian3 {
        Gaussian3::new(
            w,
            Vector3::from(mean),
            rot,
            Vector3::from(scale),
            ShCoeffs::constant([1.0; 3]),
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_unit_gaussian() {
        let g = gauss(1.0, [0.0, 0.0, 5.0], [1.0, 0.0, 0.0, 0.0], [1.0; 3]);
        let r = Ray::new(Vector3::zeros(), Vector3::z(), 0.0, f64::INFINITY).unwrap();
        let g1 = project_to_ray(&g, &r).unwrap();
        assert!((g1.amplitude - 1.0).abs() < 1e-15);
        assert!((g1.mean - 5.0).abs() < 1e-15);
        assert!((g1.stddev - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_view_keeps_peak() {
        let g = gauss(2.0, [10.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [2.0, 1.0, 1.0]);
        let r = Ray::new(Vector3::zeros(), Vector3::x(), 0.0, f64::INFINITY).unwrap();
        let g1 = project_to_ray(&g, &r).unwrap();
        assert!((g1.stddev - 2.0).abs() < 1e-15);
        assert!((g1.mean - 10.0).abs() < 1e-14);
        assert!((g1.amplitude - 2.0).abs() < 1e-15);
    }

    #[test]
    fn amplitude_never_exceeds_weight() {
        let g = gauss(3.0, [1.0, -2.0, 4.0], [0.3, 0.1, -0.7, 0.2], [0.5, 1.5, 0.2]);
        for i in 0..50 {
            let a = i as f64 * 0.37;
            let r = Ray::new(
                Vector3::new(a.sin(), a.cos(), -1.0),
                Vector3::new(0.1 * a.cos(), 0.2, 1.0),
                0.0,
                f64::INFINITY,
            )
            .unwrap();
            let g1 = project_to_ray(&g, &r).unwrap();
            assert!(g1.amplitude <= 3.0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn degenerate_scale_is_rejected() {
        let mut g = gauss(1.0, [0.0; 3], [1.0, 0.0, 0.0, 0.0], [1.0; 3]);
        g.scale.y = 0.0;
        let r = Ray::new(Vector3::zeros(), Vector3::z(), 0.0, 1.0).unwrap();
        assert!(matches!(project_to_ray(&g, &r), Err(Error::InvalidPrimitive(_))));
        g.scale.y = 1e-310;
        assert!(project_to_ray(&g, &r).is_err());
        assert!(Gaussian3::new(
            1.0,
            Vector3::zeros(),
            [1.0, 0.0, 0.0, 0.0],
            Vector3::new(1.0, -1.0, 1.0),
            ShCoeffs::constant([0.0; 3])
        )
        .is_err());
    }

    #[test]
    fn quaternion_is_normalised_on_construction() {
        let g = gauss(1.0, [0.0; 3], [2.0, 0.0, 0.0, 2.0], [1.0; 3]);
        assert!((g.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precision_inverts_covariance() {
        let g = gauss(1.0, [0.0; 3], [0.9, 0.2, -0.3, 0.1], [0.4, 1.3, 2.2]);
        let id = g.covariance() * g.precision();
        assert!((id - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn ray_rejects_bad_bounds() {
        assert!(Ray::new(Vector3::zeros(), Vector3::z(), 1.0, 1.0).is_err());
        assert!(Ray::new(Vector3::zeros(), Vector3::zeros(), 0.0, 1.0).is_err());
        let r = Ray::new(Vector3::zeros(), Vector3::new(0.0, 3.0, 4.0), 0.0, 1.0).unwrap();
        assert!((r.dir.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn optical_depth_of_whole_line() {
        let g1 = Gaussian1::new(1.5, 2.0, 0.7);
        let full = g1.optical_depth(f64::NEG_INFINITY, f64::INFINITY);
        let expect = 1.5 * 0.7 * (2.0 * std::f64::consts::PI).sqrt();
        assert!((full - expect).abs() < 1e-14);
        let split = g1.optical_depth(f64::NEG_INFINITY, 1.3) + g1.optical_depth(1.3, f64::INFINITY);
        assert!((split - full).abs() < 1e-14);
    }
}
