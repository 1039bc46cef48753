use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector2;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use momentsplat::bounds::{BiasSchedule, Bounds};
use momentsplat::camera::Camera;
use momentsplat::error::{Error, Result};
use momentsplat::io::{load_image, load_scene, save_image, write_moment_dump, write_png};
use momentsplat::metrics::compare;
use momentsplat::moments::{particle_moments, MomentAccumulator, MomentKind, SumPolicy, DEFAULT_THETA};
use momentsplat::oracle::{exact_optical_depth, isolated_opacity, OracleConfig};
use momentsplat::proxy::{confidence_proxy, ewa_proxy, Footprint, ScreenEllipse};
use momentsplat::quadrature::QuadratureConfig;
use momentsplat::render::{oracle_render, render, ImageBuffer, ProxyMode, RenderConfig};
use momentsplat::scene::Scene;
use momentsplat::selftest::{self, CRITERIA};
use momentsplat::synthetic::{default_camera, six_gaussians};
use momentsplat::warp::WarpConfig;

/// Moment-based volumetric renderer for 3D Gaussian scenes.
#[derive(Parser)]
#[command(name = "momentsplat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene with the moment renderer.
    Render {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        config: RenderArgs,
        /// Output stem; writes .png, .pfm and .alpha.pfm.
        #[arg(long, short)]
        out: PathBuf,
        /// Also write the per-pixel moments here.
        #[arg(long)]
        moments_out: Option<PathBuf>,
        /// Write render statistics as JSON here.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Render the fine-step reference image.
    OracleRender {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        warp: WarpArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Midpoint samples per ray before refinement.
        #[arg(long, default_value_t = OracleConfig::default().steps)]
        steps: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// PSNR and error statistics between two images, as JSON.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the JSON record here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the per-pixel moment buffer of a render.
    MomentsDump {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        config: RenderArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Lower and upper optical-depth bounds along one pixel ray as CSV
    /// (eta, L, U, tau_true).
    BoundsSweep {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        config: RenderArgs,
        /// Pixel column; defaults to the image centre.
        #[arg(long)]
        x: Option<usize>,
        /// Pixel row; defaults to the image centre.
        #[arg(long)]
        y: Option<usize>,
        #[arg(long, default_value_t = 64)]
        points: usize,
        /// CSV destination; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Overlay of one primitive's confidence conic, EWA ellipse and the
    /// pixels whose isolated opacity exceeds the confidence level.
    ProxyDebug {
        #[command(flatten)]
        scene: SceneArgs,
        /// Index of the primitive in the scene list.
        #[arg(long, default_value_t = 0)]
        gaussian: usize,
        #[arg(long, default_value_t = momentsplat::proxy::DEFAULT_CONFIDENCE)]
        confidence: f64,
        #[arg(long, default_value_t = momentsplat::warp::DEFAULT_NEAR)]
        near: f64,
        /// PNG destination.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Optimise the split constants and print them as JSON.
    SplitOptimize,
    /// Run the acceptance property checks.
    Selftest {
        /// Comma-separated criterion numbers; all when absent.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        #[arg(long, default_value_t = selftest::DEFAULT_SEED)]
        seed: u64,
        /// Emit JSON records instead of text lines.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct SceneArgs {
    /// Scene JSON; the bundled six-Gaussian scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Camera index in the scene file.
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// Image size for the default camera (used when the scene has none).
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Power,
    Trig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProxyArg {
    Confidence,
    Ewa,
}

#[derive(Args, Default)]
struct WarpArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    near: Option<f64>,
    /// Far plane; `inf` for the unbounded mode.
    #[arg(long)]
    far: Option<f64>,
}

#[derive(Args)]
struct RenderArgs {
    /// JSON render configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    moments: Option<KindArg>,
    /// Moment order.
    #[arg(long)]
    n: Option<usize>,
    /// Trigonometric guard angle.
    #[arg(long)]
    theta: Option<f64>,
    #[command(flatten)]
    warp: WarpArgs,
    /// Quadrature intervals per primitive.
    #[arg(long = "N")]
    intervals: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    confidence: Option<f64>,
    #[arg(long, value_enum)]
    proxy: Option<ProxyArg>,
    /// Order-independent exact summation; `--deterministic false` disables it.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    #[arg(long)]
    threads: Option<usize>,
    /// Shuffle the primitive list with this seed before rendering.
    #[arg(long)]
    seed: Option<u64>,
}

impl WarpArgs {
    fn apply(&self, base: WarpConfig) -> Result<WarpConfig> {
        WarpConfig::new(
            self.lambda.unwrap_or(base.lambda()),
            self.near.unwrap_or(base.near()),
            self.far.unwrap_or(base.far()),
        )
    }
}

impl RenderArgs {
    fn build(&self) -> Result<RenderConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                let mut de = serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Schema {
                    path: path.display().to_string(),
                    message: format!("{} at {}", e.inner(), e.path()),
                })?
            }
            None => RenderConfig::default(),
        };
        let n = self.n.unwrap_or(cfg.moments.n());
        let theta = self.theta.unwrap_or(match cfg.moments {
            MomentKind::Trig { theta, .. } => theta,
            MomentKind::Power { .. } => DEFAULT_THETA,
        });
        let trig = match self.moments {
            Some(k) => matches!(k, KindArg::Trig),
            None => matches!(cfg.moments, MomentKind::Trig { .. }),
        };
        let kind = if trig { MomentKind::Trig { n, theta } } else { MomentKind::Power { n } };
        cfg.moments = kind;
        cfg.warp = self.warp.apply(cfg.warp)?;
        let q = &cfg.quadrature;
        cfg.quadrature = QuadratureConfig::new(
            self.intervals.unwrap_or(q.intervals()),
            self.kappa.unwrap_or(q.kappa()),
            self.epsilon.unwrap_or(q.epsilon()),
        )?;
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(c) = self.confidence {
            cfg.confidence = c;
        }
        if let Some(p) = self.proxy {
            cfg.proxy = match p {
                ProxyArg::Confidence => ProxyMode::Confidence,
                ProxyArg::Ewa => ProxyMode::Ewa,
            };
        }
        if let Some(d) = self.deterministic {
            cfg.deterministic = d;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn shuffle(&self, scene: &mut Scene) {
        if let Some(seed) = self.seed {
            scene.gaussians.shuffle(&mut StdRng::seed_from_u64(seed));
        }
    }
}

impl SceneArgs {
    fn load(&self) -> Result<(Scene, Camera)> {
        match &self.scene {
            Some(path) => {
                let (scene, cams) = load_scene(path)?;
                let cam = if cams.is_empty() && self.camera == 0 {
                    default_camera(self.width, self.height)?
                } else {
                    cams.get(self.camera).cloned().ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "camera {} requested but the scene has {}",
                            self.camera,
                            cams.len()
                        ))
                    })?
                };
                Ok((scene, cam))
            }
            None => Ok((six_gaussians(), default_camera(self.width, self.height)?)),
        }
    }
}

/// Writes to stdout, ignoring a reader that has gone away.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn write_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    emit(&format!("{text}\n"));
    if let Some(p) = path {
        fs::write(p, text + "\n")?;
    }
    Ok(())
}

fn bounds_sweep(scene: &Scene, cam: &Camera, cfg: &RenderConfig, x: usize, y: usize, points: usize) -> Result<String> {
    if x >= cam.width || y >= cam.height {
        return Err(Error::InvalidConfig(format!("pixel ({x}, {y}) lies outside the image")));
    }
    if points < 2 {
        return Err(Error::InvalidConfig("a sweep needs at least two points".into()));
    }
    let ray = cam.pixel_ray(x, y, cfg.warp.near(), cfg.warp.far())?;
    let g1s = scene.project(&ray)?;
    let mut acc = MomentAccumulator::new(cfg.moments, SumPolicy::Exact);
    for g in &g1s {
        acc.add(&particle_moments(g, &cfg.warp, cfg.moments)?)?;
    }
    let bounds = Bounds::new(&acc.finish(), &BiasSchedule::default())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidConfig(e.to_string());
    w.write_record(["eta", "L", "U", "tau_true"]).map_err(csv_err)?;
    for i in 0..points {
        let eta = i as f64 / (points - 1) as f64;
        let e = bounds.estimate(eta, cfg.beta);
        let tau = exact_optical_depth(&g1s, cfg.warp.unwarp(eta), ray.near);
        w.serialize((eta, e.lower, e.upper, tau)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn boundary(inside: &[bool], w: usize, h: usize, x: usize, y: usize) -> bool {
    if !inside[y * w + x] {
        return false;
    }
    let out = |xx: usize, yy: usize| !inside[yy * w + xx];
    (x > 0 && out(x - 1, y)) || (x + 1 < w && out(x + 1, y)) || (y > 0 && out(x, y - 1)) || (y + 1 < h && out(x, y + 1))
}

fn proxy_debug(scene: &Scene, cam: &Camera, index: usize, c: f64, near: f64) -> Result<(ImageBuffer, serde_json::Value)> {
    let g = scene.gaussians.get(index).ok_or_else(|| {
        Error::InvalidConfig(format!("gaussian {index} requested but the scene has {}", scene.gaussians.len()))
    })?;
    let (w, h) = (cam.width, cam.height);
    let mut level = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            level[y * w + x] = isolated_opacity(g, &cam.pixel_ray(x, y, near, f64::INFINITY)?)? > c;
        }
    }
    let conf = confidence_proxy(g, cam, c, near);
    let ewa = ewa_proxy(g, cam);
    let mask = |e: &ScreenEllipse, r2: f64| -> Vec<bool> {
        (0..w * h)
            .map(|i| e.mahalanobis(&Vector2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5)) <= r2)
            .collect()
    };
    let conf_mask = match &conf {
        Ok(p) => match &p.footprint {
            Footprint::Ellipse(e) => Some(mask(e, 1.0)),
            _ => None,
        },
        Err(_) => None,
    };
    let ewa_mask = ewa.as_ref().ok().map(|e| mask(e, 9.0));
    let mut img = ImageBuffer::filled(w, h, [0.0, 0.0, 0.0, 1.0]);
    let (mut covered_conf, mut covered_ewa, mut visible) = (0usize, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if level[i] {
                visible += 1;
                img.set(x, y, [0.25, 0.25, 0.25, 1.0]);
                covered_conf += conf.as_ref().is_ok_and(|p| p.footprint.rect(cam).contains(x, y)) as usize;
                covered_ewa += ewa.as_ref().is_ok_and(|e| e.rect.contains(x, y)) as usize;
            }
            if ewa_mask.as_ref().is_some_and(|m| boundary(m, w, h, x, y)) {
                img.set(x, y, [1.0, 0.1, 0.1, 1.0]);
            }
            if conf_mask.as_ref().is_some_and(|m| boundary(m, w, h, x, y)) {
                img.set(x, y, [0.1, 1.0, 0.1, 1.0]);
            }
        }
    }
    let footprint = match &conf {
        Ok(p) => match p.footprint {
            Footprint::Ellipse(_) => "ellipse".to_string(),
            Footprint::FullScreen => "full-screen".to_string(),
            Footprint::Empty => "empty".to_string(),
        },
        Err(e) => format!("degenerate: {e}"),
    };
    let summary = serde_json::json!({
        "gaussian": index,
        "confidence": c,
        "footprint": footprint,
        "near_flag": conf.as_ref().map(|p| p.near_flag).unwrap_or(false),
        "level_set_pixels": visible,
        "covered_by_confidence_rect": covered_conf,
        "covered_by_ewa_rect": covered_ewa,
    });
    Ok((img, summary))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Render {
            scene,
            config,
            out,
            moments_out,
            stats,
        } => {
            let cfg = config.build()?;
            let (mut s, cam) = scene.load()?;
            config.shuffle(&mut s);
            let r = render(&s, &cam, &cfg)?;
            let saved = save_image(&r.image, &out)?;
            if let Some(p) = moments_out {
                write_moment_dump(&r.moments, &cfg.warp, &p)?;
            }
            eprintln!("wrote {} and {}", saved.png.display(), saved.pfm.display());
            write_json(&r.stats, stats.as_deref())?;
        }
        Command::OracleRender {
            scene,
            warp,
            out,
            steps,
            threads,
        } => {
            let (s, cam) = scene.load()?;
            let warp = warp.apply(WarpConfig::default())?;
            let ocfg = OracleConfig {
                steps,
                ..OracleConfig::default()
            };
            let (img, stats) = oracle_render(&s, &cam, &warp, &ocfg, threads)?;
            let saved = save_image(&img, &out)?;
            eprintln!("wrote {} and {}", saved.png.display(), saved.pfm.display());
            write_json(&stats, None)?;
        }
        Command::Compare { a, b, json } => {
            let c = compare(&load_image(&a)?, &load_image(&b)?)?;
            write_json(&c, json.as_deref())?;
        }
        Command::MomentsDump { scene, config, out } => {
            let cfg = config.build()?;
            let (mut s, cam) = scene.load()?;
            config.shuffle(&mut s);
            let r = render(&s, &cam, &cfg)?;
            write_moment_dump(&r.moments, &cfg.warp, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::BoundsSweep {
            scene,
            config,
            x,
            y,
            points,
            out,
        } => {
            let cfg = config.build()?;
            let (s, cam) = scene.load()?;
            let text = bounds_sweep(&s, &cam, &cfg, x.unwrap_or(cam.width / 2), y.unwrap_or(cam.height / 2), points)?;
            match out {
                Some(p) => fs::write(p, text)?,
                None => emit(&text),
            }
        }
        Command::ProxyDebug {
            scene,
            gaussian,
            confidence,
            near,
            out,
        } => {
            let (s, cam) = scene.load()?;
            let (img, summary) = proxy_debug(&s, &cam, gaussian, confidence, near)?;
            write_png(&img, &out)?;
            write_json(&summary, None)?;
        }
        Command::SplitOptimize => {
            write_json(&momentsplat::adc::split_optimize()?, None)?;
        }
        Command::Selftest { only, seed, json } => {
            let mut all = true;
            for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
                let r = selftest::run(c, seed);
                if json {
                    emit(&format!("{}\n", serde_json::to_string(&r).unwrap_or_default()));
                } else {
                    emit(&format!("{}\n", r.line()));
                }
                all &= r.passed;
            }
            return Ok(all);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
