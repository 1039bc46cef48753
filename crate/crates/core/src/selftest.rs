//! Seeded property checks with fixed pass thresholds and time budgets.
//! Shared by the `acceptance` test target and `momentsplat selftest`.

use std::f64::consts::SQRT_2;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use serde::Serialize;

use crate::adc::{self, split_optimize};
use crate::bounds::{BiasSchedule, Bounds};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::metrics::compare;
use crate::moments::{
    particle_moments, power_moments_1d, raw_moment_lower_bound_check, surface_moments, zeroth_moment,
    MomentKind, MomentVector, DEFAULT_THETA,
};
use crate::numeric::exact_sum;
use crate::oracle::{
    density_3d, exact_optical_depth, isolated_opacity, oracle_moments, oracle_radiance, OracleConfig, WarpMode,
};
use crate::proxy::{confidence_proxy, ewa_proxy, PixelRect};
use crate::quadrature::{gaussian_contribution, ExactDepth, QuadratureConfig};
use crate::render::{oracle_render, render, RenderConfig};
use crate::scene::{project_to_ray, Gaussian1, Gaussian3, Ray, Scene};
use crate::sh::ShCoeffs;
use crate::synthetic::{default_camera, six_gaussians};
use crate::warp::WarpConfig;

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub id: u8,
    pub name: &'static str,
    /// The property held and the run finished inside its budget.
    pub passed: bool,
    pub property_held: bool,
    pub elapsed_s: f64,
    pub budget_s: f64,
    pub detail: String,
}

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub budget: Duration,
    run: fn(&mut StdRng) -> Result<(bool, String)>,
}

pub const CRITERIA: [Criterion; 12] = [
    Criterion { id: 1, name: "1D reparameterization exactness", budget: secs(1), run: reparameterization },
    Criterion { id: 2, name: "zeroth-moment exactness", budget: secs(1), run: zeroth_moments },
    Criterion { id: 3, name: "recurrence correctness", budget: secs(30), run: recurrence },
    Criterion { id: 4, name: "sandwich property", budget: secs(120), run: sandwich },
    Criterion { id: 5, name: "atom-exact reconstruction", budget: secs(10), run: atoms },
    Criterion { id: 6, name: "split constants", budget: secs(30), run: split_constants },
    Criterion { id: 7, name: "raw-moment lower bound", budget: secs(10), run: raw_lower_bound },
    Criterion { id: 8, name: "order independence", budget: secs(120), run: order_independence },
    Criterion { id: 9, name: "proxy coverage", budget: secs(120), run: proxy_coverage },
    Criterion { id: 10, name: "end-to-end fidelity trend", budget: secs(300), run: fidelity_trend },
    Criterion { id: 11, name: "quadrature convergence", budget: secs(30), run: quadrature_convergence },
    Criterion { id: 12, name: "clone conservation", budget: secs(1), run: clone_conservation },
];

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// Runs one criterion with its own RNG stream derived from `seed`.
pub fn run(c: &Criterion, seed: u64) -> CheckReport {
    let mut rng = StdRng::seed_from_u64(seed ^ (c.id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let start = Instant::now();
    let (held, detail) = match (c.run)(&mut rng) {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    CheckReport {
        id: c.id,
        name: c.name,
        passed: held && elapsed <= c.budget,
        property_held: held,
        elapsed_s: elapsed.as_secs_f64(),
        budget_s: c.budget.as_secs_f64(),
        detail,
    }
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<34} {} ({:.2}s / {:.0}s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.elapsed_s,
            self.budget_s,
            self.detail
        )
    }
}

fn unit_quaternion(rng: &mut StdRng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

fn unit_vector(rng: &mut StdRng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Anisotropic primitive with a constant random colour.
pub fn random_gaussian(rng: &mut StdRng, mean: Vector3<f64>, scale: (f64, f64), weight: (f64, f64)) -> Gaussian3 {
    let s = Vector3::from_fn(|_, _| rng.random_range(scale.0..scale.1));
    let rgb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    Gaussian3::new(
        rng.random_range(weight.0..weight.1),
        mean,
        unit_quaternion(rng),
        s,
        ShCoeffs::constant(rgb),
    )
    .expect("sampled parameters are valid")
}

fn random_point(rng: &mut StdRng, half: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-half..half))
}

/// Random 1D particle with depth between 0.05 and 4 over `[near, ∞)`.
pub fn random_particle(rng: &mut StdRng, near: f64) -> Gaussian1 {
    let mean = near + (rng.random_range(0.3f64.ln()..30f64.ln())).exp();
    let stddev = rng.random_range(0.02..0.3) * mean;
    let depth = rng.random_range(0.05..4.0);
    let unit = Gaussian1::new(1.0, mean, stddev).total_depth(near);
    Gaussian1::new(depth / unit, mean, stddev)
}

fn reparameterization(rng: &mut StdRng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mean = random_point(rng, 3.0);
        let g = random_gaussian(rng, mean, (0.05, 2.0), (0.01, 20.0));
        let ray = Ray::new(random_point(rng, 6.0), unit_vector(rng), 0.0, f64::INFINITY)?;
        let g1 = project_to_ray(&g, &ray)?;
        let t = (g1.mean + g1.stddev * rng.random_range(-4.0..4.0)).max(0.0);
        let err = (density_3d(&g, &ray.at(t)) - g1.density(t)).abs() / g1.amplitude.max(1.0);
        worst = worst.max(err);
    }
    Ok((worst <= 1e-10, format!("max scaled error {worst:.3e}")))
}

fn zeroth_moments(rng: &mut StdRng) -> Result<(bool, String)> {
    let warp = WarpConfig::default();
    let trig = MomentKind::Trig { n: 3, theta: DEFAULT_THETA };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let g = random_particle(rng, warp.near());
        let g = Gaussian1 { mean: g.mean - rng.random_range(0.0..3.0) * g.stddev, ..g };
        let exact = exact_optical_depth(&[g], warp.far(), warp.near());
        let power = zeroth_moment(&g, &warp);
        let tm = particle_moments(&g, &warp, trig)?.m0();
        worst = worst.max(((power - exact) / exact).abs()).max(((tm - exact) / exact).abs());
    }
    Ok((worst <= 1e-12, format!("max relative error {worst:.3e}")))
}

fn recurrence(rng: &mut StdRng) -> Result<(bool, String)> {
    let warp = WarpConfig::default();
    let ocfg = OracleConfig { quad_tol: 0.0, ..OracleConfig::default() };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g = random_particle(rng, warp.near());
        let analytic = power_moments_1d(&g, &warp, 4)?;
        let reference = oracle_moments(&[g], &warp, MomentKind::Power { n: 4 }, WarpMode::Linearized, &ocfg)?;
        for (a, b) in analytic.iter().zip(reference.values()) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    Ok((worst <= 1e-8, format!("max relative error over k = 0..8: {worst:.3e}")))
}

/// Fraction of `(mixture, η)` pairs satisfying `L ≤ τ ≤ U` up to tolerance.
pub fn sandwich_fraction(rng: &mut StdRng, mixtures: usize, kind: MomentKind) -> Result<(f64, f64)> {
    let warp = WarpConfig::default();
    let ocfg = OracleConfig::default();
    let mut ok = 0usize;
    let mut total = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..mixtures {
        let count = rng.random_range(1..=6);
        let g1s: Vec<Gaussian1> = (0..count).map(|_| random_particle(rng, warp.near())).collect();
        let m = oracle_moments(&g1s, &warp, kind, WarpMode::Exact, &ocfg)?;
        let bounds = Bounds::new(&m, &BiasSchedule::default())?;
        let tol = 1e-6 * (1.0 + m.m0());
        for i in 0..64 {
            let eta = (i as f64 + 0.5) / 64.0;
            let tau = exact_optical_depth(&g1s, warp.unwarp(eta), warp.near());
            let e = bounds.estimate(eta, 0.0);
            let miss = (e.lower - tau).max(tau - e.upper);
            worst = worst.max(miss);
            ok += (miss <= tol) as usize;
            total += 1;
        }
    }
    Ok((ok as f64 / total as f64, worst))
}

fn sandwich(rng: &mut StdRng) -> Result<(bool, String)> {
    let (frac, worst) = sandwich_fraction(rng, 200, MomentKind::Power { n: 4 })?;
    Ok((frac >= 0.995, format!("{:.2}% of pairs hold, worst miss {worst:.3e}", 100.0 * frac)))
}

/// Sorted atoms in `(0.02, 0.98)` at least `gap` apart with weights in `[0.1, 1]`.
pub fn random_atoms(rng: &mut StdRng, count: usize, gap: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let mut xs: Vec<f64> = (0..count).map(|_| rng.random_range(0.02..0.98)).collect();
        xs.sort_by(f64::total_cmp);
        if xs.windows(2).all(|w| w[1] - w[0] >= gap) {
            let ws = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
            return (xs, ws);
        }
    }
}

/// Moments of `Σ w_i δ(x_i)`.
pub fn atomic_moments(xs: &[f64], ws: &[f64], kind: MomentKind) -> Result<MomentVector> {
    let mut values = vec![0.0; kind.len()];
    for (x, w) in xs.iter().zip(ws) {
        for (v, s) in values.iter_mut().zip(surface_moments(*w, *x, kind).values()) {
            *v += s;
        }
    }
    MomentVector::from_values(kind, values)
}

fn atoms(rng: &mut StdRng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for kind in [MomentKind::Power { n: 4 }, MomentKind::Trig { n: 4, theta: DEFAULT_THETA }] {
        for _ in 0..100 {
            let count = rng.random_range(1..=5);
            let (xs, ws) = random_atoms(rng, count, 0.05);
            let m = atomic_moments(&xs, &ws, kind)?;
            let b = Bounds::new(&m, &BiasSchedule::minimal())?;
            let mut below = 0.0;
            for (x, w) in xs.iter().zip(&ws) {
                let e = b.estimate(*x, 0.0);
                worst = worst.max((e.lower - below).abs()).max((e.upper - below - w).abs());
                below += w;
            }
        }
    }
    Ok((worst <= 1e-5, format!("max split error {worst:.3e}")))
}

fn split_constants(_: &mut StdRng) -> Result<(bool, String)> {
    let p = split_optimize()?;
    let ok = (0.6375..=0.6395).contains(&p.gamma) && (0.6118..=0.6138).contains(&p.delta);
    Ok((ok, format!("gamma {:.6} delta {:.6} objective {:.6e}", p.gamma, p.delta, p.objective)))
}

fn raw_lower_bound(rng: &mut StdRng) -> Result<(bool, String)> {
    let mut failures = 0;
    for _ in 0..100 {
        let mean = rng.random_range(0.1..10.0);
        let stddev = rng.random_range(0.01..2.0);
        let g = Gaussian1::new(rng.random_range(0.1..5.0), mean, stddev);
        let near = rng.random_range(0.0..mean);
        let far = if rng.random_bool(0.5) {
            f64::INFINITY
        } else {
            mean + SQRT_2 * stddev * rng.random_range(1.0..4.0)
        };
        for k in 0..=6 {
            if raw_moment_lower_bound_check(&g, k, near, far) != Some(true) {
                failures += 1;
            }
        }
    }
    Ok((failures == 0, format!("{failures} of 700 (particle, k) pairs violate the bound")))
}

fn image_bits(img: &crate::render::ImageBuffer) -> Vec<u32> {
    img.data.iter().flat_map(|px| px.map(f32::to_bits)).collect()
}

fn order_independence(rng: &mut StdRng) -> Result<(bool, String)> {
    let scene = six_gaussians();
    let cam = default_camera(256, 256)?;
    let cfg = RenderConfig::default();
    let mut reference: Option<Vec<u32>> = None;
    let mut mismatches = 0;
    for _ in 0..20 {
        let mut s = scene.clone();
        s.gaussians.shuffle(rng);
        let bits = image_bits(&render(&s, &cam, &cfg)?.image);
        match &reference {
            None => reference = Some(bits),
            Some(r) => mismatches += (*r != bits) as usize,
        }
    }
    Ok((mismatches == 0, format!("{mismatches} of 19 permuted renders differ from the first")))
}

/// Pixels whose isolated opacity exceeds `c`, and how many of them each
/// rectangle covers.
pub fn coverage(g: &Gaussian3, cam: &Camera, c: f64, near: f64, rects: &[PixelRect]) -> Result<(usize, Vec<usize>)> {
    let mut visible = 0;
    let mut covered = vec![0; rects.len()];
    for y in 0..cam.height {
        for x in 0..cam.width {
            if isolated_opacity(g, &cam.pixel_ray(x, y, near, f64::INFINITY)?)? > c {
                visible += 1;
                for (n, r) in covered.iter_mut().zip(rects) {
                    *n += r.contains(x, y) as usize;
                }
            }
        }
    }
    Ok((visible, covered))
}

/// Footprint rectangle, empty when the proxy is rejected as degenerate.
fn proxy_rect(g: &Gaussian3, cam: &Camera, c: f64, near: f64) -> Result<Option<PixelRect>> {
    match confidence_proxy(g, cam, c, near) {
        Ok(p) => Ok(Some(p.footprint.rect(cam))),
        Err(Error::OutOfDomain(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn proxy_coverage(rng: &mut StdRng) -> Result<(bool, String)> {
    let (c, near) = (0.01, 0.01);
    let cam = Camera::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 64.0, 64, 64)?;
    let mut visible = 0;
    let mut covered = 0;
    let mut skipped = 0;
    for _ in 0..100 {
        let z = rng.random_range(2.0..12.0);
        let mean = Vector3::new(rng.random_range(-0.4..0.4) * z, rng.random_range(-0.4..0.4) * z, z);
        let g = random_gaussian(rng, mean, (0.05, 1.0), (0.5, 5.0));
        let rect = proxy_rect(&g, &cam, c, near)?;
        skipped += rect.is_none() as usize;
        let (v, cov) = coverage(&g, &cam, c, near, &[rect.unwrap_or_else(PixelRect::empty)])?;
        visible += v;
        covered += cov[0];
    }
    let frac = covered as f64 / visible.max(1) as f64;
    // Near-camera primitives (mean depth twice the largest scale) seen
    // through a wide lens, where the affine projection is least accurate.
    let wide = Camera::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 16.0, 64, 64)?;
    let mut ewa_short = 0;
    let mut cases = 0;
    while cases < 10 {
        let g = random_gaussian(rng, Vector3::zeros(), (0.05, 0.3), (0.5, 5.0));
        let z = 2.0 * g.max_scale();
        let g = Gaussian3 {
            mean: Vector3::new(rng.random_range(-0.5..0.5) * z, 0.0, z),
            ..g
        };
        let Some(conf) = proxy_rect(&g, &wide, c, near)? else {
            continue;
        };
        cases += 1;
        let ewa = ewa_proxy(&g, &wide)?.rect;
        let (_, cov) = coverage(&g, &wide, c, near, &[conf, ewa])?;
        ewa_short += (cov[1] < cov[0]) as usize;
    }
    let ok = frac >= 0.99 && ewa_short > 0;
    Ok((
        ok,
        format!(
            "confidence proxy covers {:.3}% of {visible} pixels ({skipped} degenerate); EWA lower on {ewa_short} of {cases} near cases",
            100.0 * frac
        ),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityLog {
    pub power4: f64,
    pub trig3: f64,
    pub trig5: f64,
}

/// PSNR against the oracle for the three ablation settings.
pub fn fidelity(width: usize, oracle_steps: usize) -> Result<FidelityLog> {
    let scene = six_gaussians();
    let cam = default_camera(width, width)?;
    let base = RenderConfig::default();
    let ocfg = OracleConfig { steps: oracle_steps, ..OracleConfig::default() };
    let (truth, _) = oracle_render(&scene, &cam, &base.warp, &ocfg, base.threads)?;
    let psnr = |moments: MomentKind| -> Result<f64> {
        let cfg = RenderConfig { moments, ..base.clone() };
        Ok(compare(&render(&scene, &cam, &cfg)?.image, &truth)?.psnr)
    };
    Ok(FidelityLog {
        power4: psnr(MomentKind::Power { n: 4 })?,
        trig3: psnr(MomentKind::Trig { n: 3, theta: DEFAULT_THETA })?,
        trig5: psnr(MomentKind::Trig { n: 5, theta: DEFAULT_THETA })?,
    })
}

fn fidelity_trend(_: &mut StdRng) -> Result<(bool, String)> {
    let log = fidelity(256, 4096)?;
    let ok = log.trig5 >= log.trig3 - 0.25 && log.trig5 >= log.power4 - 0.25;
    Ok((ok, serde_json::to_string(&log).unwrap_or_default()))
}

/// Three overlapping primitives straddling a random ray.
pub fn overlapping_ray(rng: &mut StdRng) -> Result<(Scene, Ray)> {
    let ray = Ray::new(random_point(rng, 1.0), unit_vector(rng), 0.01, f64::INFINITY)?;
    let gs = (0..3)
        .map(|_| {
            let t = rng.random_range(3.0..5.0);
            let mean = ray.at(t) + random_point(rng, 0.2);
            random_gaussian(rng, mean, (0.3, 0.8), (0.5, 3.0))
        })
        .collect();
    Ok((Scene::new(gs, Vector3::new(0.1, 0.2, 0.3))?, ray))
}

/// Quadrature radiance with the exact optical depth in place of the bounds.
pub fn injected_radiance(scene: &Scene, ray: &Ray, intervals: usize) -> Result<Vector3<f64>> {
    let cfg = QuadratureConfig::new(intervals, crate::quadrature::DEFAULT_KAPPA, crate::quadrature::DEFAULT_EPSILON)?;
    let g1s = scene.project(ray)?;
    let depth = ExactDepth { g1s: &g1s, near: ray.near };
    let mut rgb = Vector3::zeros();
    for (g, g1) in scene.gaussians.iter().zip(&g1s) {
        let color = g.sh.evaluate(&ray.dir);
        rgb += gaussian_contribution(&color, g1, &depth, ray.near, ray.far, &cfg).rgb;
    }
    let t_far = (-exact_optical_depth(&g1s, ray.far, ray.near)).exp();
    Ok(rgb + scene.background * t_far)
}

fn quadrature_convergence(rng: &mut StdRng) -> Result<(bool, String)> {
    let ocfg = OracleConfig::default();
    let mut failures = 0;
    let mut ratio = 0.0f64;
    for _ in 0..20 {
        let (scene, ray) = overlapping_ray(rng)?;
        let truth = oracle_radiance(&scene, &ray, &ocfg)?.rgb;
        let err: Vec<f64> = [2, 8, 32]
            .iter()
            .map(|&n| injected_radiance(&scene, &ray, n).map(|r| (r - truth).amax()))
            .collect::<Result<_>>()?;
        if !(err[2] < err[1] && err[1] < err[0]) {
            failures += 1;
        }
        ratio = ratio.max(err[2] / err[0]);
    }
    Ok((
        failures == 0,
        format!("{failures} of 20 rays not strictly decreasing; worst err(32)/err(2) {ratio:.3e}"),
    ))
}

fn clone_conservation(rng: &mut StdRng) -> Result<(bool, String)> {
    let warp = WarpConfig::default();
    let scene: Vec<Gaussian3> = (0..8)
        .map(|_| {
            let mean = random_point(rng, 2.0);
            random_gaussian(rng, mean, (0.1, 1.0), (0.1, 5.0))
        })
        .collect();
    let cloned: Vec<Gaussian3> = scene
        .iter()
        .flat_map(|g| {
            let (a, b) = adc::clone(g);
            [a, b]
        })
        .collect();
    let m0 = |gs: &[Gaussian3], ray: &Ray| -> Result<f64> {
        let parts: Vec<f64> = gs
            .iter()
            .map(|g| project_to_ray(g, ray).map(|g1| zeroth_moment(&g1, &warp)))
            .collect::<Result<_>>()?;
        Ok(exact_sum(parts))
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let origin = random_point(rng, 1.0) - Vector3::new(0.0, 0.0, 8.0);
        let target = random_point(rng, 1.5);
        let ray = Ray::new(origin, target - origin, warp.near(), warp.far())?;
        let (a, b) = (m0(&scene, &ray)?, m0(&cloned, &ray)?);
        if a > 0.0 {
            worst = worst.max(((a - b) / a).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max relative change {worst:.3e}")))
}
