//! Reference computations used to validate the moment renderer.
//!
//! Nothing here calls into the analytic moment code; optical depth is
//! evaluated from its closed form, radiance by fine midpoint integration and
//! moments by adaptive quadrature.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use errorfunctions::ComplexErrorFunctions;
use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{MomentKind, MomentVector};
use crate::numeric::{exact_sum, integrate};
use crate::scene::{Gaussian1, Gaussian3, Ray, Scene};
use crate::warp::WarpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Midpoint samples per ray at the first refinement level.
    pub steps: usize,
    /// Doublings allowed while the Richardson check fails.
    pub max_doublings: u32,
    /// Accepted change between successive refinements.
    pub radiance_tol: f64,
    /// Absolute tolerance for moment quadrature.
    pub quad_tol: f64,
    /// Support half-width in standard deviations.
    pub horizon: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            steps: 16384,
            max_doublings: 4,
            radiance_tol: 1e-6,
            quad_tol: 1e-10,
            horizon: 8.0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 256 {
            return Err(Error::InvalidConfig(format!(
                "oracle step count must be at least 256, got {}",
                self.steps
            )));
        }
        Ok(())
    }
}

const NEGLIGIBLE_DEPTH: f64 = 1e-14;

/// `w G(x | μ, Σ)` from the explicitly inverted covariance.
pub fn density_3d(g: &Gaussian3, x: &Vector3<f64>) -> f64 {
    let r = g.rotation.to_rotation_matrix().into_inner();
    let s2 = nalgebra::Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
    let cov = r * s2 * r.transpose();
    let inv = cov.try_inverse().unwrap_or_else(nalgebra::Matrix3::zeros);
    let d = x - g.mean;
    g.weight * (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp()
}

fn erf_between(lo: f64, hi: f64) -> f64 {
    // erf(hi) - erf(lo) = erfc(lo) - erfc(hi), switching tails by sign
    if lo > 0.0 {
        libm::erfc(lo) - libm::erfc(hi)
    } else if hi < 0.0 {
        libm::erfc(-hi) - libm::erfc(-lo)
    } else {
        libm::erf(hi) - libm::erf(lo)
    }
}

/// Optical depth of one particle over `[a, b]`.
pub fn particle_depth(g: &Gaussian1, a: f64, b: f64) -> f64 {
    if !(b > a) || g.amplitude == 0.0 {
        return 0.0;
    }
    let k = FRAC_1_SQRT_2 / g.stddev;
    g.amplitude * g.stddev * (PI / 2.0).sqrt() * erf_between((a - g.mean) * k, (b - g.mean) * k)
}

/// Closed-form optical depth of the mixture over `[near, t]`.
pub fn exact_optical_depth(g1s: &[Gaussian1], t: f64, near: f64) -> f64 {
    exact_sum(g1s.iter().map(|g| particle_depth(g, near, t)))
}

/// Radiance along one ray together with its convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRadiance {
    pub rgb: Vector3<f64>,
    /// `1 - T(t_f)`.
    pub alpha: f64,
    pub steps: usize,
    /// Change at the last doubling; above tolerance means unconverged.
    pub change: f64,
    pub converged: bool,
}

struct Particle {
    g1: Gaussian1,
    color: Vector3<f64>,
}

fn segments(particles: &[Particle], ray: &Ray, horizon: f64) -> Vec<(f64, f64, f64)> {
    let mut cuts = Vec::new();
    for p in particles {
        let lo = (p.g1.mean - horizon * p.g1.stddev).max(ray.near);
        let hi = (p.g1.mean + horizon * p.g1.stddev).min(ray.far);
        if hi > lo {
            cuts.extend([lo, hi]);
            if p.g1.mean > lo && p.g1.mean < hi {
                cuts.push(p.g1.mean);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let finest = particles
            .iter()
            .filter(|p| (mid - p.g1.mean).abs() <= horizon * p.g1.stddev)
            .map(|p| p.g1.stddev)
            .fold(f64::INFINITY, f64::min);
        if finest.is_finite() {
            out.push((a, b, (b - a) / finest));
        }
    }
    out
}

fn midpoint_radiance(
    particles: &[Particle],
    segs: &[(f64, f64, f64)],
    near: f64,
    horizon: f64,
    steps: usize,
) -> (Vector3<f64>, usize) {
    let total: f64 = segs.iter().map(|s| s.2).sum();
    let mut rgb = Vector3::zeros();
    let mut used = 0;
    let mut active = Vec::with_capacity(particles.len());
    for &(a, b, weight) in segs {
        // Segments are cut at support edges, so the set of particles inside
        // their horizon is fixed; the ones already passed contribute their
        // full (constant up to e^{-h²/2}) depth.
        let mid = 0.5 * (a + b);
        active.clear();
        let mut passed = 0.0;
        for p in particles {
            let reach = horizon * p.g1.stddev;
            if (mid - p.g1.mean).abs() <= reach {
                active.push(p);
            } else if mid > p.g1.mean {
                passed += particle_depth(&p.g1, near, b);
            }
        }
        let n = ((steps as f64 * weight / total).ceil() as usize).max(4);
        used += n;
        let h = (b - a) / n as f64;
        let mut seg = Vector3::zeros();
        for i in 0..n {
            let t = a + (i as f64 + 0.5) * h;
            let mut tau = passed;
            let mut e = Vector3::zeros();
            for p in &active {
                tau += particle_depth(&p.g1, near, t);
                e += p.color * p.g1.density(t);
            }
            seg += e * (-tau).exp();
        }
        rgb += seg * h;
    }
    (rgb, used)
}

/// Emission-absorption radiance along `ray` with the background behind.
pub fn oracle_radiance(scene: &Scene, ray: &Ray, cfg: &OracleConfig) -> Result<OracleRadiance> {
    let mut particles = Vec::with_capacity(scene.gaussians.len());
    for g in &scene.gaussians {
        let g1 = crate::scene::project_to_ray(g, ray)?;
        // Particles this ray barely grazes cannot move the result.
        if g1.amplitude > 0.0 && particle_depth(&g1, ray.near, ray.far) > NEGLIGIBLE_DEPTH {
            particles.push(Particle {
                g1,
                color: g.sh.evaluate(&ray.dir),
            });
        }
    }
    let g1s: Vec<Gaussian1> = particles.iter().map(|p| p.g1).collect();
    let tau = exact_optical_depth(&g1s, ray.far, ray.near);
    let t_far = (-tau).exp();
    let segs = segments(&particles, ray, cfg.horizon);
    if segs.is_empty() {
        return Ok(OracleRadiance {
            rgb: scene.background * t_far,
            alpha: 1.0 - t_far,
            steps: 0,
            change: 0.0,
            converged: true,
        });
    }
    let mut steps = cfg.steps;
    let (mut prev, _) = midpoint_radiance(&particles, &segs, ray.near, cfg.horizon, steps / 2);
    let mut change = f64::INFINITY;
    let mut cur = prev;
    let mut used = 0;
    for _ in 0..=cfg.max_doublings {
        let (rgb, n) = midpoint_radiance(&particles, &segs, ray.near, cfg.horizon, steps);
        cur = rgb;
        used = n;
        change = (cur - prev).amax();
        if change < cfg.radiance_tol {
            break;
        }
        prev = cur;
        steps *= 2;
    }
    Ok(OracleRadiance {
        rgb: cur + scene.background * t_far,
        alpha: 1.0 - t_far,
        steps: used,
        change,
        converged: change < cfg.radiance_tol,
    })
}

/// Whether the warp is evaluated exactly or through each particle's own
/// tangent at its (range-clamped) mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpMode {
    Exact,
    Linearized,
}

fn tangent(g: &Gaussian1, warp: &WarpConfig) -> (f64, f64) {
    let c = g.mean.max(warp.near()).min(warp.far());
    let slope = warp.warp_deriv(c);
    (warp.warp(c) - slope * c, slope)
}

fn support(g: &Gaussian1, warp: &WarpConfig) -> Option<(f64, f64)> {
    let lo = (g.mean - 14.0 * g.stddev).max(warp.near());
    let hi = (g.mean + 14.0 * g.stddev).min(warp.far());
    (hi > lo).then_some((lo, hi))
}

fn quad<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let breaks: Vec<f64> = (0..=16).map(|i| lo + (hi - lo) * i as f64 / 16.0).collect();
    integrate(f, &breaks, tol, 1e-13, 200_000).map(|(v, _)| v)
}

/// Moments of the mixture by adaptive quadrature of `ĝ(t)^k σ(t)`
/// (or the complex exponential for trigonometric kinds).
pub fn oracle_moments(
    g1s: &[Gaussian1],
    warp: &WarpConfig,
    kind: MomentKind,
    mode: WarpMode,
    cfg: &OracleConfig,
) -> Result<MomentVector> {
    let len = kind.len();
    let mut parts: Vec<Vec<f64>> = vec![Vec::new(); len];
    for g in g1s {
        if g.amplitude == 0.0 {
            continue;
        }
        let Some((lo, hi)) = support(g, warp) else {
            continue;
        };
        let (c0, c1) = tangent(g, warp);
        let u = |t: f64| match mode {
            WarpMode::Exact => warp.warp(t),
            WarpMode::Linearized => c0 + c1 * t,
        };
        let tol = cfg.quad_tol;
        parts[0].push(quad(|t| g.density(t), lo, hi, tol)?);
        match kind {
            MomentKind::Power { n } => {
                for (k, part) in parts.iter_mut().enumerate().take(2 * n + 1).skip(1) {
                    part.push(quad(|t| u(t).powi(k as i32) * g.density(t), lo, hi, tol)?);
                }
            }
            MomentKind::Trig { n, theta } => {
                for k in 1..=n {
                    let freq = k as f64 * (2.0 * PI - theta);
                    let re = quad(|t| (freq * u(t)).cos() * g.density(t), lo, hi, tol)?;
                    let im = quad(|t| (freq * u(t)).sin() * g.density(t), lo, hi, tol)?;
                    parts[2 * k - 1].push(re);
                    parts[2 * k].push(im);
                }
            }
        }
    }
    MomentVector::from_values(kind, parts.into_iter().map(exact_sum).collect())
}

/// Complex error function, valid for `|Im z| <= 10`.
pub fn complex_erf_reference(z: Complex64) -> Result<Complex64> {
    if !(z.im.abs() <= 10.0) || !z.re.is_finite() {
        return Err(Error::OutOfDomain(format!(
            "complex erf reference needs |Im z| <= 10, got {z}"
        )));
    }
    if z.im == 0.0 {
        return Ok(Complex64::new(libm::erf(z.re), 0.0));
    }
    Ok(z.erf())
}

/// `1 - exp(-τ̄)` of one primitive along `ray`, ignoring all others.
pub fn isolated_opacity(g: &Gaussian3, ray: &Ray) -> Result<f64> {
    let g1 = crate::scene::project_to_ray(g, ray)?;
    Ok(-(-particle_depth(&g1, ray.near, ray.far)).exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::ShCoeffs;

    fn white_blob(w: f64, z: f64, s: f64) -> Gaussian3 {
        Gaussian3::new(
            w,
            Vector3::new(0.0, 0.0, z),
            [1.0, 0.0, 0.0, 0.0],
            Vector3::repeat(s),
            ShCoeffs::constant([1.0; 3]),
        )
        .unwrap()
    }

    fn axis_ray() -> Ray {
        Ray::new(Vector3::zeros(), Vector3::z(), 0.01, f64::INFINITY).unwrap()
    }

    #[test]
    fn empty_scene_shows_background() {
        let scene = Scene::new(vec![], Vector3::new(0.2, 0.3, 0.4)).unwrap();
        let r = oracle_radiance(&scene, &axis_ray(), &OracleConfig::default()).unwrap();
        assert_eq!(r.rgb, Vector3::new(0.2, 0.3, 0.4));
        assert_eq!(r.alpha, 0.0);
    }

    #[test]
    fn single_white_emitter_matches_isolated_opacity() {
        let g = white_blob(1.5, 4.0, 0.4);
        let scene = Scene::new(vec![g.clone()], Vector3::zeros()).unwrap();
        let r = oracle_radiance(&scene, &axis_ray(), &OracleConfig::default()).unwrap();
        let alpha = isolated_opacity(&g, &axis_ray()).unwrap();
        assert!(r.converged);
        assert!((r.rgb.x - alpha).abs() < 1e-6, "{} vs {}", r.rgb.x, alpha);
        assert!((r.alpha - alpha).abs() < 1e-14);
    }

    #[test]
    fn slab_like_transmittance() {
        // A very wide Gaussian is locally a constant-density slab.
        let g = Gaussian1::new(0.5, 100.0, 50.0);
        let tau = exact_optical_depth(&[g], 101.0, 99.0);
        let sigma0 = g.density(100.0);
        assert!(((-tau).exp() / (-2.0 * sigma0).exp() - 1.0).abs() < 0.01);
    }

    #[test]
    fn depth_additivity() {
        let a = Gaussian1::new(1.0, 3.0, 0.5);
        let b = Gaussian1::new(0.3, 4.0, 1.5);
        let both = exact_optical_depth(&[a, b], 5.0, 0.01);
        let split = exact_optical_depth(&[a], 5.0, 0.01) + exact_optical_depth(&[b], 5.0, 0.01);
        assert!((both - split).abs() < 1e-14);
        assert_eq!(exact_optical_depth(&[], 5.0, 0.0), 0.0);
    }

    #[test]
    fn complex_erf_reference_checks() {
        assert_eq!(complex_erf_reference(Complex64::new(0.0, 0.0)).unwrap(), Complex64::new(0.0, 0.0));
        let x = 0.8;
        let r = complex_erf_reference(Complex64::new(x, 0.0)).unwrap();
        assert!((r.re - libm::erf(x)).abs() < 1e-15);
        let z = Complex64::new(1.0, 0.5);
        let a = complex_erf_reference(z.conj()).unwrap();
        let b = complex_erf_reference(z).unwrap().conj();
        assert!((a - b).norm() < 1e-12);
        assert!(complex_erf_reference(Complex64::new(0.0, 11.0)).is_err());
    }

    #[test]
    fn zeroth_oracle_moment_is_depth() {
        let g = Gaussian1::new(1.0, 5.0, 0.5);
        let w = WarpConfig::default();
        let m = oracle_moments(&[g], &w, MomentKind::Power { n: 2 }, WarpMode::Exact, &OracleConfig::default())
            .unwrap();
        let tau = exact_optical_depth(&[g], f64::INFINITY, w.near());
        assert!((m.m0() - tau).abs() < 1e-10);
    }
}
