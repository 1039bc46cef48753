//! Scene and image I/O.

/// Serialises `f64::INFINITY` as the string `"inf"` so JSON stays valid.
pub mod infinite_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "infinity" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" | "-Infinity" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::render::{ImageBuffer, MomentImage};
use crate::scene::{Gaussian3, Scene};
use crate::sh::ShCoeffs;
use crate::warp::WarpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShRecord {
    pub degree: u8,
    pub coeffs: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianRecord {
    pub weight: f64,
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    /// `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub sh: ShRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    /// Row-major intrinsics.
    #[serde(rename = "K")]
    pub k: [f64; 9],
    /// Row-major `[R | t]`.
    pub world_to_cam: [f64; 12],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub gaussians: Vec<GaussianRecord>,
    #[serde(default)]
    pub background: [f64; 3],
    #[serde(default)]
    pub cameras: Vec<CameraRecord>,
}

impl GaussianRecord {
    pub fn from_gaussian(g: &Gaussian3) -> Self {
        let q = g.rotation.quaternion();
        Self {
            weight: g.weight,
            mean: g.mean.into(),
            scale: g.scale.into(),
            rotation: [q.w, q.i, q.j, q.k],
            sh: ShRecord {
                degree: g.sh.degree(),
                coeffs: g.sh.coeffs().to_vec(),
            },
        }
    }

    pub fn to_gaussian(&self) -> Result<Gaussian3> {
        let sh = ShCoeffs::new(self.sh.degree, self.sh.coeffs.clone())?;
        Gaussian3::new(
            self.weight,
            Vector3::from(self.mean),
            self.rotation,
            Vector3::from(self.scale),
            sh,
        )
    }
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera) -> Self {
        let k = cam.intrinsics;
        let r = cam.rotation;
        let t = cam.translation;
        Self {
            k: std::array::from_fn(|i| k[(i / 3, i % 3)]),
            world_to_cam: std::array::from_fn(|i| {
                let (row, col) = (i / 4, i % 4);
                if col == 3 {
                    t[row]
                } else {
                    r[(row, col)]
                }
            }),
            width: cam.width,
            height: cam.height,
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let k = Matrix3::from_row_slice(&self.k);
        let w = &self.world_to_cam;
        let r = Matrix3::new(w[0], w[1], w[2], w[4], w[5], w[6], w[8], w[9], w[10]);
        let t = Vector3::new(w[3], w[7], w[11]);
        Camera::new(k, r, t, self.width, self.height)
    }
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, cameras: &[Camera]) -> Self {
        Self {
            gaussians: scene.gaussians.iter().map(GaussianRecord::from_gaussian).collect(),
            background: scene.background.into(),
            cameras: cameras.iter().map(CameraRecord::from_camera).collect(),
        }
    }

    /// Validates every record; errors carry the JSON path of the offender.
    pub fn build(&self, source: &str) -> Result<(Scene, Vec<Camera>)> {
        let schema = |path: String, e: Error| Error::Schema {
            path: format!("{source}: {path}"),
            message: e.to_string(),
        };
        let gaussians = self
            .gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| g.to_gaussian().map_err(|e| schema(format!("gaussians[{i}]"), e)))
            .collect::<Result<Vec<_>>>()?;
        let cameras = self
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| c.to_camera().map_err(|e| schema(format!("cameras[{i}]"), e)))
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene::new(gaussians, Vector3::from(self.background))
            .map_err(|e| schema("gaussians".into(), e))?;
        Ok((scene, cameras))
    }
}

/// Parses scene JSON; `source` names the input in error messages.
pub fn parse_scene(text: &str, source: &str) -> Result<(Scene, Vec<Camera>)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: SceneFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let path = e.path().to_string();
        Error::Schema {
            path: format!("{source}: {path} (line {}, column {})", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })?;
    file.build(source)
}

pub fn load_scene(path: &Path) -> Result<(Scene, Vec<Camera>)> {
    let text = fs::read_to_string(path)?;
    parse_scene(&text, &path.display().to_string())
}

pub fn save_scene(scene: &Scene, cameras: &[Camera], path: &Path) -> Result<()> {
    let file = SceneFile::from_scene(scene, cameras);
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Writes a little-endian PFM; `channels` is 1 (`Pf`) or 3 (`PF`).
/// Rows are stored bottom-up as the format requires.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidConfig(format!("PFM supports 1 or 3 channels, got {channels}")));
    }
    if data.len() != width * height * channels {
        return Err(Error::DimensionMismatch(format!(
            "PFM data has {} values, expected {}",
            data.len(),
            width * height * channels
        )));
    }
    let mut out = Vec::with_capacity(32 + data.len() * 4);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    write!(out, "{tag}\n{width} {height}\n-1.0\n")?;
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a PFM written by any conforming encoder; returns
/// `(width, height, channels, top-down data)`.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Schema {
        path: path.display().to_string(),
        message: m.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("missing PF/Pf magic")),
    };
    let width: usize = fields[1].parse().map_err(|_| bad("bad PFM width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| bad("bad PFM scale"))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    if bytes.len() < pos + 4 * n {
        return Err(bad("truncated PFM data"));
    }
    let raw: Vec<f32> = bytes[pos..pos + 4 * n]
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row = width * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..height).rev() {
        data.extend_from_slice(&raw[y * row..(y + 1) * row]);
    }
    Ok((width, height, channels, data))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Linear to sRGB transfer with clamping to `[0, 1]`.
pub fn srgb_encode(v: f32) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let s = if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round() as u8
}

pub fn srgb_decode(v: u8) -> f32 {
    let s = v as f32 / 255.0;
    if s <= 0.040_45 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

pub fn write_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.data.len() * 4);
    for px in &img.data {
        bytes.extend([srgb_encode(px[0]), srgb_encode(px[1]), srgb_encode(px[2])]);
        bytes.push((px[3].clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    image::save_buffer(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgba8,
    )?;
    Ok(())
}

/// Paths written by [`save_image`].
#[derive(Debug, Clone, PartialEq)]
pub struct SavedImage {
    pub png: PathBuf,
    pub pfm: PathBuf,
    pub alpha_pfm: PathBuf,
}

/// Writes `<stem>.png` (sRGB), `<stem>.pfm` (linear RGB) and
/// `<stem>.alpha.pfm` next to each other, whatever extension `path` has.
pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<SavedImage> {
    let saved = SavedImage {
        png: with_suffix(path, ".png"),
        pfm: with_suffix(path, ".pfm"),
        alpha_pfm: with_suffix(path, ".alpha.pfm"),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_png(img, &saved.png)?;
    let rgb: Vec<f32> = img.data.iter().flat_map(|p| [p[0], p[1], p[2]]).collect();
    write_pfm(&saved.pfm, img.width, img.height, 3, &rgb)?;
    let alpha: Vec<f32> = img.data.iter().map(|p| p[3]).collect();
    write_pfm(&saved.alpha_pfm, img.width, img.height, 1, &alpha)?;
    Ok(saved)
}

/// Loads a PFM (plus its `.alpha.pfm` sibling when present) or an 8-bit
/// image, returning linear RGBA.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let is_pfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    if is_pfm {
        let (w, h, c, data) = read_pfm(path)?;
        let mut img = ImageBuffer::new(w, h);
        for (i, px) in img.data.iter_mut().enumerate() {
            if c == 3 {
                *px = [data[3 * i], data[3 * i + 1], data[3 * i + 2], 1.0];
            } else {
                *px = [data[i], data[i], data[i], 1.0];
            }
        }
        let alpha_path = with_suffix(path, ".alpha.pfm");
        if c == 3 && alpha_path.exists() {
            let (aw, ah, ac, alpha) = read_pfm(&alpha_path)?;
            if aw == w && ah == h && ac == 1 {
                for (px, a) in img.data.iter_mut().zip(alpha) {
                    px[3] = a;
                }
            }
        }
        return Ok(img);
    }
    let decoded = image::open(path)?.to_rgba8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut img = ImageBuffer::new(w, h);
    for (px, p) in img.data.iter_mut().zip(decoded.pixels()) {
        *px = [
            srgb_decode(p[0]),
            srgb_decode(p[1]),
            srgb_decode(p[2]),
            p[3] as f32 / 255.0,
        ];
    }
    Ok(img)
}

pub const MOMENT_DUMP_MAGIC: &[u8; 4] = b"MSMD";
pub const MOMENT_DUMP_VERSION: u32 = 1;

/// Header of a moment dump.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDumpHeader {
    /// 0 for power moments, 1 for trigonometric moments.
    pub kind: u32,
    pub n: u32,
    pub theta: f32,
    pub lambda: f32,
    pub near: f32,
    pub far: f32,
    pub width: u32,
    pub height: u32,
    pub stride: u32,
}

/// `MSMD`, then little-endian `u32` version, kind, n, `f32` θ, λ, near,
/// far, `u32` width, height, stride, then `width * height * stride` `f32`
/// values, one record per pixel in row-major order.
pub fn write_moment_dump(m: &MomentImage, warp: &WarpConfig, path: &Path) -> Result<()> {
    let (kind, theta) = match m.kind {
        crate::moments::MomentKind::Power { .. } => (0u32, 0.0f32),
        crate::moments::MomentKind::Trig { theta, .. } => (1u32, theta as f32),
    };
    let mut out = Vec::with_capacity(48 + m.data.len() * 4);
    out.extend_from_slice(MOMENT_DUMP_MAGIC);
    for v in [MOMENT_DUMP_VERSION, kind, m.kind.n() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [theta, warp.lambda() as f32, warp.near() as f32, warp.far() as f32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [m.width as u32, m.height as u32, m.stride() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &m.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_moment_dump(path: &Path) -> Result<(MomentDumpHeader, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Schema {
        path: path.display().to_string(),
        message: m.to_string(),
    };
    if bytes.len() < 44 || &bytes[..4] != MOMENT_DUMP_MAGIC {
        return Err(bad("not a moment dump"));
    }
    let word = |i: usize| -> [u8; 4] { [bytes[4 + 4 * i], bytes[5 + 4 * i], bytes[6 + 4 * i], bytes[7 + 4 * i]] };
    let u = |i: usize| u32::from_le_bytes(word(i));
    let f = |i: usize| f32::from_le_bytes(word(i));
    if u(0) != MOMENT_DUMP_VERSION {
        return Err(bad("unsupported moment dump version"));
    }
    let header = MomentDumpHeader {
        kind: u(1),
        n: u(2),
        theta: f(3),
        lambda: f(4),
        near: f(5),
        far: f(6),
        width: u(7),
        height: u(8),
        stride: u(9),
    };
    let count = header.width as usize * header.height as usize * header.stride as usize;
    let body = &bytes[44..];
    if body.len() != 4 * count {
        return Err(bad("moment dump size does not match its header"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{
        "gaussians": [{"weight": 1.0, "mean": [0, 0, 5], "scale": [1, 1, 1],
                       "rotation": [1, 0, 0, 0], "sh": {"degree": 0, "coeffs": [[0.5, 0.5, 0.5]]}}],
        "background": [0, 0, 0]
    }"#;

    #[test]
    fn minimal_scene() {
        let (scene, cams) = parse_scene(ONE, "inline").unwrap();
        assert_eq!(scene.gaussians.len(), 1);
        assert!(cams.is_empty());
    }

    #[test]
    fn missing_weight_is_named() {
        let text = ONE.replace("\"weight\": 1.0, ", "");
        let err = parse_scene(&text, "inline").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("weight") && msg.contains("gaussians[0]"), "{msg}");
    }

    #[test]
    fn invalid_values_are_schema_errors() {
        let text = ONE.replace("\"scale\": [1, 1, 1]", "\"scale\": [1, -1, 1]");
        let err = parse_scene(&text, "inline").unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        assert!(err.to_string().contains("gaussians[0]"));
    }

    #[test]
    fn pfm_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pfm");
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| (i as f32).sqrt() * 1e-3 - 0.004).collect();
        write_pfm(&p, 2, 3, 3, &data).unwrap();
        let (w, h, c, back) = read_pfm(&p).unwrap();
        assert_eq!((w, h, c), (2, 3, 3));
        assert!(data.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn srgb_round_trip() {
        for v in 0..=255u8 {
            assert_eq!(srgb_encode(srgb_decode(v)), v);
        }
    }
}
