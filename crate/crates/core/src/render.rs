//! The moment renderer: cull, footprint, per-pixel moments, quadrature and
//! opacity rescaling. Also the oracle image for comparisons.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BiasSchedule, Bounds, DEFAULT_BETA};
use crate::camera::{bounding_sphere_cull, Camera, DEFAULT_CULL_MARGIN};
use crate::error::{Error, Result};
use crate::moments::{particle_moments, MomentAccumulator, MomentKind, MomentVector, SumPolicy, DEFAULT_POWER_N};
use crate::oracle::{oracle_radiance, OracleConfig};
use crate::proxy::{confidence_proxy, ewa_proxy, Footprint, PixelRect, DEFAULT_CONFIDENCE};
use crate::quadrature::{gaussian_contribution, rescale_radiance, MomentDepth, PixelAccumulator, QuadratureConfig};
use crate::scene::{project_to_ray, Gaussian1, Scene};
use crate::warp::WarpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    #[default]
    Confidence,
    Ewa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub moments: MomentKind,
    pub warp: WarpConfig,
    pub quadrature: QuadratureConfig,
    pub beta: f64,
    pub confidence: f64,
    pub proxy: ProxyMode,
    pub deterministic: bool,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
    pub cull_margin: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            moments: MomentKind::Power { n: DEFAULT_POWER_N },
            warp: WarpConfig::default(),
            quadrature: QuadratureConfig::default(),
            beta: DEFAULT_BETA,
            confidence: DEFAULT_CONFIDENCE,
            proxy: ProxyMode::Confidence,
            deterministic: true,
            threads: None,
            cull_margin: DEFAULT_CULL_MARGIN,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        self.moments.validate()?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be positive".into()));
        }
        if !(self.cull_margin > 0.0) {
            return Err(Error::InvalidConfig("cull margin must be positive".into()));
        }
        Ok(())
    }

    fn policy(&self) -> SumPolicy {
        if self.deterministic {
            SumPolicy::Exact
        } else {
            SumPolicy::Plain
        }
    }
}

/// Linear RGBA, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 4]>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 4]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, px: [f32; 4]) -> Self {
        Self {
            width,
            height,
            data: vec![px; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 4] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [f32; 4]) {
        self.data[y * self.width + x] = px;
    }

    /// Coordinates of non-finite pixels, or alpha outside `[0, 1]`.
    pub fn invalid_pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.iter().all(|v| v.is_finite()) || !(0.0..=1.0).contains(&p[3]))
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        let bad = self.invalid_pixels();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::NonFiniteOutput {
                count: bad.len(),
                first: bad.into_iter().take(8).collect(),
            })
        }
    }
}

/// Dense per-pixel moment vectors in the layout of one [`MomentKind`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentImage {
    pub kind: MomentKind,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl MomentImage {
    pub fn stride(&self) -> usize {
        self.kind.len()
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let s = self.stride();
        let i = (y * self.width + x) * s;
        &self.data[i..i + s]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RenderStats {
    pub gaussians: usize,
    pub culled: usize,
    pub empty_footprint: usize,
    pub full_screen_fallback: usize,
    pub degenerate_footprint: usize,
    pub near_plane_flagged: usize,
    pub pixel_hits: usize,
    pub degenerate_pixels: usize,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct Render {
    pub image: ImageBuffer,
    pub moments: MomentImage,
    pub stats: RenderStats,
}

struct Visible {
    index: usize,
    rect: PixelRect,
}

fn footprints(scene: &Scene, cam: &Camera, cfg: &RenderConfig, stats: &mut RenderStats) -> Vec<Visible> {
    let mut out = Vec::new();
    for (index, g) in scene.gaussians.iter().enumerate() {
        if g.weight == 0.0 || !bounding_sphere_cull(g, cam, cfg.cull_margin) {
            stats.culled += 1;
            continue;
        }
        let rect = match cfg.proxy {
            ProxyMode::Confidence => match confidence_proxy(g, cam, cfg.confidence, cfg.warp.near()) {
                Ok(p) => {
                    if p.near_flag {
                        stats.near_plane_flagged += 1;
                    }
                    match p.footprint {
                        Footprint::Empty => stats.empty_footprint += 1,
                        Footprint::FullScreen => stats.full_screen_fallback += 1,
                        Footprint::Ellipse(_) => {}
                    }
                    p.footprint.rect(cam)
                }
                Err(_) => {
                    stats.degenerate_footprint += 1;
                    continue;
                }
            },
            ProxyMode::Ewa => match ewa_proxy(g, cam) {
                Ok(e) => e.rect,
                Err(_) => {
                    stats.degenerate_footprint += 1;
                    continue;
                }
            },
        };
        if !rect.is_empty() {
            out.push(Visible { index, rect });
        }
    }
    out
}

struct PixelResult {
    rgba: [f32; 4],
    moments: Vec<f64>,
    hits: usize,
    degenerate: bool,
    penalty: f64,
}

fn shade_pixel(
    scene: &Scene,
    cam: &Camera,
    cfg: &RenderConfig,
    visible: &[&Visible],
    x: usize,
    y: usize,
) -> Result<PixelResult> {
    let ray = cam.pixel_ray(x, y, cfg.warp.near(), cfg.warp.far())?;
    let mut hits: Vec<(usize, Gaussian1)> = Vec::new();
    for v in visible {
        if v.rect.contains(x, y) {
            let g1 = project_to_ray(&scene.gaussians[v.index], &ray).map_err(|e| {
                Error::InvalidPrimitive(format!("gaussian {} at pixel ({x}, {y}): {e}", v.index))
            })?;
            if g1.amplitude > 0.0 {
                hits.push((v.index, g1));
            }
        }
    }

    let mut acc = MomentAccumulator::new(cfg.moments, cfg.policy());
    for (_, g1) in &hits {
        acc.add(&particle_moments(g1, &cfg.warp, cfg.moments)?)?;
    }
    let m: MomentVector = acc.finish();
    let m0 = m.m0();

    let (bounds, degenerate) = match Bounds::new(&m, &BiasSchedule::default()) {
        Ok(b) => (Some(b), false),
        Err(Error::DegenerateMoments { .. }) => (None, true),
        Err(e) => return Err(e),
    };

    let mut pixel = PixelAccumulator::new();
    if let Some(bounds) = &bounds {
        let depth = MomentDepth {
            bounds,
            warp: &cfg.warp,
            beta: cfg.beta,
        };
        for (i, g1) in &hits {
            let color = scene.gaussians[*i].sh.evaluate(&ray.dir);
            let c = gaussian_contribution(&color, g1, &depth, ray.near, ray.far, &cfg.quadrature);
            pixel.add(&c);
        }
    }
    // A degenerate pixel keeps L = U = m0: every interval sees zero
    // visibility and only the attenuated background remains.
    let rgb = rescale_radiance(
        &pixel.rgb(),
        pixel.opacity(),
        m0,
        &scene.background,
        cfg.quadrature.epsilon(),
    );
    let alpha = -(-m0).exp_m1();
    Ok(PixelResult {
        rgba: [rgb.x as f32, rgb.y as f32, rgb.z as f32, alpha as f32],
        moments: m.values().to_vec(),
        hits: hits.len(),
        degenerate,
        penalty: pixel.penalty(),
    })
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Renders `scene` from `cam`.
pub fn render(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Result<Render> {
    cfg.validate()?;
    let mut stats = RenderStats {
        gaussians: scene.gaussians.len(),
        ..Default::default()
    };
    let visible = footprints(scene, cam, cfg, &mut stats);
    let (w, h) = (cam.width, cam.height);

    let rows: Vec<Vec<&Visible>> = (0..h)
        .map(|y| visible.iter().filter(|v| y >= v.rect.y0 && y < v.rect.y1).collect())
        .collect();

    let results: Vec<Result<Vec<PixelResult>>> = with_pool(cfg.threads, || {
        rows.par_iter()
            .enumerate()
            .map(|(y, row)| (0..w).map(|x| shade_pixel(scene, cam, cfg, row, x, y)).collect())
            .collect()
    })?;

    let stride = cfg.moments.len();
    let mut image = ImageBuffer::new(w, h);
    let mut moments = MomentImage {
        kind: cfg.moments,
        width: w,
        height: h,
        data: Vec::with_capacity(w * h * stride),
    };
    let mut penalty = crate::numeric::ExactSum::new();
    for (y, row) in results.into_iter().enumerate() {
        for (x, px) in row?.into_iter().enumerate() {
            image.set(x, y, px.rgba);
            moments.data.extend_from_slice(&px.moments);
            stats.pixel_hits += px.hits;
            stats.degenerate_pixels += px.degenerate as usize;
            penalty.add(px.penalty);
        }
    }
    stats.penalty = penalty.value();
    image.check_finite()?;
    Ok(Render { image, moments, stats })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OracleStats {
    pub unconverged: usize,
    pub max_change: f64,
}

/// Fine-step reference image over the whole scene (no culling).
pub fn oracle_render(
    scene: &Scene,
    cam: &Camera,
    warp: &WarpConfig,
    cfg: &OracleConfig,
    threads: Option<usize>,
) -> Result<(ImageBuffer, OracleStats)> {
    cfg.validate()?;
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Result<Vec<([f32; 4], f64, bool)>>> = with_pool(threads, || {
        (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let ray = cam.pixel_ray(x, y, warp.near(), warp.far())?;
                        let r = oracle_radiance(scene, &ray, cfg)?;
                        let px = [r.rgb.x as f32, r.rgb.y as f32, r.rgb.z as f32, r.alpha as f32];
                        Ok((px, r.change, r.converged))
                    })
                    .collect()
            })
            .collect()
    })?;
    let mut image = ImageBuffer::new(w, h);
    let mut stats = OracleStats::default();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (px, change, ok)) in row?.into_iter().enumerate() {
            image.set(x, y, px);
            stats.max_change = stats.max_change.max(change);
            stats.unconverged += (!ok) as usize;
        }
    }
    image.check_finite()?;
    Ok((image, stats))
}

/// Background colour with zero alpha everywhere.
pub fn background_image(background: &Vector3<f64>, width: usize, height: usize) -> ImageBuffer {
    ImageBuffer::filled(
        width,
        height,
        [background.x as f32, background.y as f32, background.z as f32, 0.0],
    )
}
