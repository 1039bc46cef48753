//! Real spherical harmonics up to degree 3, in the band ordering and sign
//! convention used by common Gaussian splatting checkpoints.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH expansion before clamping.
pub const COLOR_OFFSET: f64 = 0.5;

/// Per-primitive appearance: `(degree + 1)^2` RGB coefficient triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShCoeffs {
    degree: u8,
    coeffs: Vec<[f64; 3]>,
}

impl ShCoeffs {
    pub fn new(degree: u8, coeffs: Vec<[f64; 3]>) -> Result<Self> {
        if degree > 3 {
            return Err(Error::InvalidPrimitive(format!(
                "spherical harmonic degree {degree} exceeds 3"
            )));
        }
        let expected = basis_count(degree);
        if coeffs.len() != expected {
            return Err(Error::InvalidPrimitive(format!(
                "degree {degree} needs {expected} coefficient triples, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { degree, coeffs })
    }

    /// Degree-0 coefficients that evaluate to `rgb` in every direction.
    pub fn constant(rgb: [f64; 3]) -> Self {
        let c = rgb.map(|v| (v - COLOR_OFFSET) / C0);
        Self {
            degree: 0,
            coeffs: vec![c],
        }
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn coeffs(&self) -> &[[f64; 3]] {
        &self.coeffs
    }

    /// Evaluates the emitted colour seen along unit direction `dir`.
    pub fn evaluate(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        let raw = self.expansion(dir);
        raw.map(|v| (v + COLOR_OFFSET).max(0.0))
    }

    /// Raw basis expansion without offset or clamp.
    pub fn expansion(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        let basis = basis(self.degree, dir);
        let mut out = Vector3::zeros();
        for (b, c) in basis.iter().zip(&self.coeffs) {
            out += Vector3::new(c[0], c[1], c[2]) * *b;
        }
        out
    }
}

pub fn basis_count(degree: u8) -> usize {
    let d = degree as usize + 1;
    d * d
}

fn basis(degree: u8, dir: &Vector3<f64>) -> Vec<f64> {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = Vec::with_capacity(basis_count(degree));
    out.push(C0);
    if degree >= 1 {
        out.extend_from_slice(&[-C1 * y, C1 * z, -C1 * x]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend_from_slice(&[
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend_from_slice(&[
            C3[0] * y * (3.0 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4.0 * zz - xx - yy),
            C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * x * (4.0 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3.0 * yy),
        ]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_direction_independent() {
        let sh = ShCoeffs::new(0, vec![[0.3, -0.2, 1.0]]).unwrap();
        for d in [Vector3::x(), -Vector3::y(), Vector3::new(1.0, 2.0, 3.0).normalize()] {
            let c = sh.evaluate(&d);
            assert!((c.x - (0.3 * C0 + 0.5)).abs() < 1e-15);
            assert!((c.y - (-0.2 * C0 + 0.5)).abs() < 1e-15);
            assert!((c.z - (1.0 * C0 + 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_coefficients_give_offset() {
        let sh = ShCoeffs::new(3, vec![[0.0; 3]; 16]).unwrap();
        let c = sh.evaluate(&Vector3::new(0.3, -0.4, 0.5).normalize());
        assert_eq!(c, Vector3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn band_one_is_odd() {
        let mut coeffs = vec![[0.0; 3]; 4];
        coeffs[1] = [0.7, 0.1, -0.2];
        coeffs[2] = [0.2, -0.3, 0.4];
        coeffs[3] = [-0.5, 0.6, 0.1];
        let sh = ShCoeffs::new(1, coeffs).unwrap();
        let d = Vector3::new(0.2, -0.7, 0.4).normalize();
        let a = sh.expansion(&d);
        let b = sh.expansion(&-d);
        assert!((a + b).norm() < 1e-15);
    }

    #[test]
    fn negative_expansion_clamps() {
        let sh = ShCoeffs::new(0, vec![[-10.0, 0.0, 0.0]]).unwrap();
        assert_eq!(sh.evaluate(&Vector3::z()).x, 0.0);
    }

    #[test]
    fn constant_round_trips() {
        let sh = ShCoeffs::constant([0.9, 0.1, 0.4]);
        let c = sh.evaluate(&Vector3::y());
        assert!((c - Vector3::new(0.9, 0.1, 0.4)).norm() < 1e-14);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(ShCoeffs::new(2, vec![[0.0; 3]; 4]).is_err());
        assert!(ShCoeffs::new(4, vec![[0.0; 3]; 25]).is_err());
    }
}
