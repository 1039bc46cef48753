//! Per-particle quadrature of the volume rendering integral against a
//! reconstructed optical depth.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::numeric::{inverse_normal_cdf, ExactSum};
use crate::oracle::{exact_optical_depth, particle_depth};
use crate::scene::Gaussian1;
use crate::warp::WarpConfig;

pub const DEFAULT_INTERVALS: usize = 5;
pub const DEFAULT_KAPPA: f64 = 3.0;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DELTA_MIN: f64 = 1e-9;
pub const SIGMA_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadratureParams", into = "QuadratureParams")]
pub struct QuadratureConfig {
    intervals: usize,
    kappa: f64,
    epsilon: f64,
    abscissae: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct QuadratureParams {
    #[serde(rename = "N")]
    intervals: usize,
    kappa: f64,
    epsilon: f64,
}

impl TryFrom<QuadratureParams> for QuadratureConfig {
    type Error = Error;
    fn try_from(p: QuadratureParams) -> Result<Self> {
        QuadratureConfig::new(p.intervals, p.kappa, p.epsilon)
    }
}

impl From<QuadratureConfig> for QuadratureParams {
    fn from(q: QuadratureConfig) -> Self {
        Self {
            intervals: q.intervals,
            kappa: q.kappa,
            epsilon: q.epsilon,
        }
    }
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self::new(DEFAULT_INTERVALS, DEFAULT_KAPPA, DEFAULT_EPSILON).expect("defaults are valid")
    }
}

impl QuadratureConfig {
    pub fn new(intervals: usize, kappa: f64, epsilon: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidConfig("quadrature needs at least one interval".into()));
        }
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(Error::InvalidConfig(format!("kappa must be >= 1, got {kappa}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {epsilon}")));
        }
        let levels = (intervals + 1) as f64;
        let abscissae = (1..=intervals + 1)
            .map(|j| inverse_normal_cdf((j as f64 - 0.5) / levels))
            .collect();
        Ok(Self {
            intervals,
            kappa,
            epsilon,
            abscissae,
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Standard-normal levels `Φ⁻¹((j - 1/2) / (N + 1))`, `j = 1..N+1`.
    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }
}

/// `t_j = m̂ + κ ŝ x_j`, clamped to `[near, far]`.
pub fn sample_intervals(g1: &Gaussian1, near: f64, far: f64, cfg: &QuadratureConfig) -> Vec<f64> {
    cfg.abscissae
        .iter()
        .map(|x| (g1.mean + cfg.kappa * g1.stddev * x).clamp(near, far))
        .collect()
}

/// Mean extinction over an interval from its optical-depth increment.
pub fn interval_density(tau_lo: f64, tau_hi: f64, delta: f64) -> f64 {
    ((tau_hi - tau_lo) / delta).max(0.0)
}

/// Source of the optical depth `τ(t)` from the near plane to `t`.
pub trait OpticalDepth {
    fn depth(&self, t: f64) -> f64;
}

/// Blended moment-bound estimate `(1 - β) L + β U` at `ĝ(t)`.
pub struct MomentDepth<'a> {
    pub bounds: &'a Bounds,
    pub warp: &'a WarpConfig,
    pub beta: f64,
}

impl OpticalDepth for MomentDepth<'_> {
    fn depth(&self, t: f64) -> f64 {
        let eta = self.warp.warp(t).clamp(0.0, 1.0);
        self.bounds.estimate(eta, self.beta).tau
    }
}

/// Closed-form optical depth of a known mixture.
pub struct ExactDepth<'a> {
    pub g1s: &'a [Gaussian1],
    pub near: f64,
}

impl OpticalDepth for ExactDepth<'_> {
    fn depth(&self, t: f64) -> f64 {
        exact_optical_depth(self.g1s, t, self.near)
    }
}

/// One particle's share of a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub rgb: Vector3<f64>,
    pub opacity: f64,
    pub penalty: f64,
}

impl Contribution {
    pub fn zero() -> Self {
        Self {
            rgb: Vector3::zeros(),
            opacity: 0.0,
            penalty: 0.0,
        }
    }
}

/// Radiance, opacity and consistency penalty contributed by one particle.
pub fn gaussian_contribution<D: OpticalDepth + ?Sized>(
    color: &Vector3<f64>,
    g1: &Gaussian1,
    depth: &D,
    near: f64,
    far: f64,
    cfg: &QuadratureConfig,
) -> Contribution {
    let mut out = Contribution::zero();
    if g1.amplitude == 0.0 {
        return out;
    }
    let t = sample_intervals(g1, near, far, cfg);
    let tau: Vec<f64> = t.iter().map(|&tj| depth.depth(tj)).collect();
    for j in 0..cfg.intervals {
        let delta = t[j + 1] - t[j];
        if !(delta > DELTA_MIN) {
            continue;
        }
        let d_tau = tau[j + 1] - tau[j];
        let vis = ((-tau[j]).exp() - (-tau[j + 1]).exp()).max(0.0);
        let sigma = interval_density(tau[j], tau[j + 1], delta).max(SIGMA_MIN);
        // Interval mean of the particle density, matching how `sigma` is
        // recovered from the depth difference.
        let tau_ij = particle_depth(g1, t[j], t[j + 1]);
        let share = (tau_ij / delta / sigma).clamp(0.0, 1.0);
        out.rgb += color * (vis * share);
        out.opacity += vis * share;
        let violation = (tau_ij - d_tau).max(0.0);
        out.penalty += violation * violation;
    }
    out
}

/// Per-pixel sums of particle contributions.
#[derive(Debug, Clone, Default)]
pub struct PixelAccumulator {
    rgb: [ExactSum; 3],
    opacity: ExactSum,
    penalty: ExactSum,
}

impl PixelAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, c: &Contribution) {
        for (s, v) in self.rgb.iter_mut().zip(c.rgb.iter()) {
            s.add(*v);
        }
        self.opacity.add(c.opacity);
        self.penalty.add(c.penalty);
    }

    pub fn rgb(&self) -> Vector3<f64> {
        Vector3::new(self.rgb[0].value(), self.rgb[1].value(), self.rgb[2].value())
    }

    pub fn opacity(&self) -> f64 {
        self.opacity.value()
    }

    pub fn penalty(&self) -> f64 {
        self.penalty.value()
    }
}

/// `(1 - e^{-m0}) / max(ε, O) · ΣL + e^{-m0} L_bg`.
pub fn rescale_radiance(
    rgb_sum: &Vector3<f64>,
    opacity: f64,
    m0: f64,
    background: &Vector3<f64>,
    epsilon: f64,
) -> Vector3<f64> {
    let alpha = -(-m0).exp_m1();
    rgb_sum * (alpha / opacity.max(epsilon)) + background * (-m0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abscissae_are_symmetric_and_increasing() {
        let q = QuadratureConfig::default();
        let x = q.abscissae();
        assert_eq!(x.len(), 6);
        for j in 0..6 {
            assert!((x[j] + x[5 - j]).abs() < 1e-12);
            if j > 0 {
                assert!(x[j] > x[j - 1]);
            }
        }
    }

    #[test]
    fn samples_mirror_around_mean() {
        let q = QuadratureConfig::default();
        let g = Gaussian1::new(1.0, 5.0, 0.5);
        let t = sample_intervals(&g, 0.01, f64::INFINITY, &q);
        for j in 0..6 {
            assert!((t[j] + t[5 - j] - 10.0).abs() < 1e-12);
        }
        let behind = Gaussian1::new(1.0, 0.01 - 100.0, 0.5);
        assert!(sample_intervals(&behind, 0.01, f64::INFINITY, &q)
            .iter()
            .all(|&t| t == 0.01));
    }

    #[test]
    fn unit_kappa_places_normal_quantiles() {
        let q = QuadratureConfig::new(3, 1.0, 1e-4).unwrap();
        let g = Gaussian1::new(1.0, 7.0, 2.0);
        let t = sample_intervals(&g, 0.0, f64::INFINITY, &q);
        let p = crate::numeric::normal_cdf((t[0] - 7.0) / 2.0);
        assert!((p - 0.125).abs() < 1e-12);
    }

    #[test]
    fn interval_density_examples() {
        assert_eq!(interval_density(0.4, 0.4, 0.2), 0.0);
        assert!((interval_density(0.2, 0.5, 0.1) - 3.0).abs() < 1e-12);
        assert_eq!(interval_density(0.5, 0.2, 0.1), 0.0);
        // Constant slab: τ(t) = σ0 (t - a)
        let s0 = 1.7;
        assert!((interval_density(s0 * 0.3, s0 * 1.1, 0.8) - s0).abs() < 1e-12);
    }

    #[test]
    fn empty_depth_gives_full_violation() {
        struct Zero;
        impl OpticalDepth for Zero {
            fn depth(&self, _: f64) -> f64 {
                0.0
            }
        }
        let q = QuadratureConfig::default();
        let g = Gaussian1::new(1.0, 5.0, 0.5);
        let c = gaussian_contribution(&Vector3::repeat(1.0), &g, &Zero, 0.01, f64::INFINITY, &q);
        assert_eq!(c.opacity, 0.0);
        let t = sample_intervals(&g, 0.01, f64::INFINITY, &q);
        let expect: f64 = t.windows(2).map(|w| particle_depth(&g, w[0], w[1]).powi(2)).sum();
        assert!((c.penalty - expect).abs() < 1e-14);
    }

    #[test]
    fn rescale_examples() {
        let bg = Vector3::new(0.1, 0.2, 0.3);
        assert_eq!(rescale_radiance(&Vector3::zeros(), 0.0, 0.0, &bg, 1e-4), bg);
        let m0 = 0.5;
        let o = 1.0 - (-m0 as f64).exp();
        let s = Vector3::new(0.2, 0.1, 0.0);
        let r = rescale_radiance(&s, o, m0, &Vector3::zeros(), 1e-4);
        assert!((r - s).norm() < 1e-15);
        let r = rescale_radiance(&Vector3::new(0.3, 0.0, 0.0), 0.3, 0.5, &Vector3::zeros(), 1e-4);
        assert!((r.x - 0.393_469_340_287_366_6).abs() < 1e-12);
    }
}
