//! Screen-space footprints: the perspective-exact confidence conic and the
//! affine EWA ellipse used as a baseline.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::scene::Gaussian3;

/// Isolated-opacity level enclosed by the confidence proxy.
pub const DEFAULT_CONFIDENCE: f64 = 0.01;

/// Half extent of the EWA box in standard deviations.
pub const EWA_SIGMAS: f64 = 3.0;

/// Pixels `x0..x1` by `y0..y1` (exclusive upper ends).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn full(cam: &Camera) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: cam.width,
            y1: cam.height,
        }
    }

    pub fn empty() -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: 0,
            y1: 0,
        }
    }

    /// Pixels whose centres fall in `center ± half`, clipped to the image.
    pub fn around(center: Vector2<f64>, half: Vector2<f64>, cam: &Camera) -> Self {
        let span = |c: f64, h: f64, n: usize| -> (usize, usize) {
            let lo = (c - h - 0.5).ceil();
            let hi = (c + h - 0.5).floor();
            if !(hi >= 0.0) || !(lo <= n as f64 - 1.0) || hi < lo {
                return (0, 0);
            }
            (lo.max(0.0) as usize, (hi.min(n as f64 - 1.0) as usize) + 1)
        };
        let (x0, x1) = span(center.x, half.x, cam.width);
        let (y0, y1) = span(center.y, half.y, cam.height);
        if x0 == x1 || y0 == y1 {
            return Self::empty();
        }
        Self { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenEllipse {
    pub center: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Ascending eigenvalues of `cov` with matching unit eigenvectors as
    /// columns.
    pub eigenvalues: Vector2<f64>,
    pub eigenvectors: Matrix2<f64>,
    pub rect: PixelRect,
}

impl ScreenEllipse {
    /// Builds the ellipse and the pixel box of its semi-axes
    /// `v_i = sqrt(λ_i) e_i`, scaled by `extent`.
    pub fn new(center: Vector2<f64>, cov: Matrix2<f64>, extent: f64, cam: &Camera) -> Result<Self> {
        let eig = SymmetricEigen::new(cov);
        let (i0, i1) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let eigenvalues = Vector2::new(eig.eigenvalues[i0], eig.eigenvalues[i1]);
        if !(eigenvalues[0] > 0.0) || !eigenvalues[1].is_finite() || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::OutOfDomain(format!(
                "screen covariance is not positive definite (eigenvalues {:?})",
                eigenvalues.as_slice()
            )));
        }
        let eigenvectors = Matrix2::from_columns(&[eig.eigenvectors.column(i0), eig.eigenvectors.column(i1)]);
        let mut half = Vector2::zeros();
        for i in 0..2 {
            let v = eigenvectors.column(i) * (extent * eigenvalues[i].sqrt());
            half += v.abs();
        }
        let rect = PixelRect::around(center, half, cam);
        Ok(Self {
            center,
            cov,
            eigenvalues,
            eigenvectors,
            rect,
        })
    }

    /// `(p - μ)^T Σ^-1 (p - μ)`.
    pub fn mahalanobis(&self, p: &Vector2<f64>) -> f64 {
        let d = p - self.center;
        let inv = self.cov.try_inverse().unwrap_or_else(Matrix2::zeros);
        (d.transpose() * inv * d)[0]
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        self.mahalanobis(p) <= 1.0
    }

    /// Point on the boundary at parameter angle `phi`.
    pub fn boundary_point(&self, phi: f64) -> Vector2<f64> {
        let a = self.eigenvectors.column(0) * self.eigenvalues[0].sqrt();
        let b = self.eigenvectors.column(1) * self.eigenvalues[1].sqrt();
        self.center + a * phi.cos() + b * phi.sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Footprint {
    Ellipse(ScreenEllipse),
    /// The camera lies inside the confidence set; every pixel may see the
    /// particle.
    FullScreen,
    /// No ray reaches the confidence level.
    Empty,
}

impl Footprint {
    pub fn rect(&self, cam: &Camera) -> PixelRect {
        match self {
            Footprint::Ellipse(e) => e.rect,
            Footprint::FullScreen => PixelRect::full(cam),
            Footprint::Empty => PixelRect::empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceProxy {
    pub footprint: Footprint,
    pub conic: Matrix3<f64>,
    pub kappa: f64,
    /// The mean is closer than `4√2 ŝ` to the near plane along the view
    /// direction; the footprint may then be too large.
    pub near_flag: bool,
}

/// Mean and precision in the camera frame.
pub fn to_camera_frame(g: &Gaussian3, cam: &Camera) -> (Vector3<f64>, Matrix3<f64>) {
    let mu = cam.to_camera(&g.mean);
    let a = cam.rotation * g.precision() * cam.rotation.transpose();
    (mu, 0.5 * (a + a.transpose()))
}

/// Conic `W = m m^T - κ M` whose zero set in homogeneous pixels encloses the
/// isolated-opacity level `c`.
pub fn confidence_proxy(g: &Gaussian3, cam: &Camera, c: f64, near: f64) -> Result<ConfidenceProxy> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence must lie in (0, 1), got {c}")));
    }
    let (mu, a) = to_camera_frame(g, cam);
    let q_mu = mu.dot(&(a * mu));
    let u = mu.normalize();
    let q_u = u.dot(&(a * u));

    let m_hat = u.dot(&(a * mu)) / q_u;
    let s_hat = 1.0 / q_u.sqrt();
    let near_flag = !(m_hat - near > 32f64.sqrt() * s_hat);

    let big_c = -(-c).ln_1p() * q_u.sqrt() / (2.0 * std::f64::consts::PI).sqrt();
    let kappa = 2.0 * (big_c.ln() - g.weight.ln()) + q_mu;

    let k_inv = cam.k_inv();
    let m = k_inv.transpose() * a * mu;
    let big_m = k_inv.transpose() * a * k_inv;
    let w = m * m.transpose() - big_m * kappa;
    let conic = 0.5 * (w + w.transpose());

    let footprint = if g.weight == 0.0 || kappa >= q_mu {
        Footprint::Empty
    } else if kappa <= 0.0 {
        Footprint::FullScreen
    } else {
        let w22 = conic.fixed_view::<2, 2>(0, 0).into_owned();
        let w21 = conic.fixed_view::<2, 1>(0, 2).into_owned();
        let w33 = conic[(2, 2)];
        let w22_inv = w22
            .try_inverse()
            .ok_or_else(|| Error::OutOfDomain("conic block is singular".into()))?;
        let center = -(w22_inv * w21);
        let scale = (center.transpose() * w22 * center)[0] - w33;
        let cov = w22_inv * scale;
        let cov = 0.5 * (cov + cov.transpose());
        Footprint::Ellipse(ScreenEllipse::new(center, cov, 1.0, cam)?)
    };
    Ok(ConfidenceProxy {
        footprint,
        conic,
        kappa,
        near_flag,
    })
}

/// Signs of the eigenvalues of a symmetric 3x3 matrix, sorted descending.
pub fn signature_check(w: &Matrix3<f64>) -> [i8; 3] {
    let mut ev: Vec<f64> = SymmetricEigen::new(*w).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let scale = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    std::array::from_fn(|i| {
        if ev[i] > tol {
            1
        } else if ev[i] < -tol {
            -1
        } else {
            0
        }
    })
}

/// Locally affine projection of the covariance with a `3σ` box.
pub fn ewa_proxy(g: &Gaussian3, cam: &Camera) -> Result<ScreenEllipse> {
    let t = cam.to_camera(&g.mean);
    if !(t.z > 0.0) {
        return Err(Error::OutOfDomain("Gaussian mean is behind the camera".into()));
    }
    let k = &cam.intrinsics;
    let h = k * t;
    let center = Vector2::new(h.x / t.z, h.y / t.z);
    let mut j = nalgebra::Matrix2x3::zeros();
    for r in 0..2 {
        for col in 0..3 {
            j[(r, col)] = k[(r, col)] / t.z;
        }
        j[(r, 2)] -= center[r] / t.z;
    }
    let cov_cam = cam.rotation * g.covariance() * cam.rotation.transpose();
    let cov = j * cov_cam * j.transpose();
    let cov = 0.5 * (cov + cov.transpose());
    ScreenEllipse::new(center, cov, EWA_SIGMAS, cam)
}
