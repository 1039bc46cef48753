//! Densification helpers: view-independent opacity, density initialisation,
//! bias-free cloning and the deterministic split.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numeric::nelder_mead;
use crate::scene::{Gaussian3, Scene};

pub const SPLIT_GAMMA: f64 = 0.638_550_281_524_658_2;
pub const SPLIT_DELTA: f64 = 0.612_815_309_096_691_2;

/// Largest admissible initial opacity; larger requests are clamped.
pub const MAX_INIT_OPACITY: f64 = 1.0 - 1e-4;

/// Scale ties closer than this pick the lexicographically first axis.
pub const TIE_TOLERANCE: f64 = 1e-9;

const GRID_MIN: f64 = -12.0;
const GRID_MAX: f64 = 12.0;
const GRID_POINTS: usize = 4096;

fn sqrt_2pi() -> f64 {
    (2.0 * PI).sqrt()
}

/// `1 - exp(-√(2π) w min(s))`: opacity seen along the shortest axis.
pub fn view_independent_opacity(g: &Gaussian3) -> f64 {
    -(-sqrt_2pi() * g.weight * g.min_scale()).exp_m1()
}

/// Peak density whose shortest-axis opacity would be `o_init` for a
/// Gaussian of average scale. The flag reports a clamped request.
pub fn init_density(o_init: f64, scale: &Vector3<f64>) -> (f64, bool) {
    let clamped = o_init >= MAX_INIT_OPACITY;
    let o = o_init.clamp(0.0, MAX_INIT_OPACITY);
    let avg = scale.mean();
    (-(-o).ln_1p() / (sqrt_2pi() * avg), clamped)
}

/// Two copies at half the peak density.
pub fn clone(g: &Gaussian3) -> (Gaussian3, Gaussian3) {
    let h = g.with_weight(0.5 * g.weight);
    (h.clone(), h)
}

pub fn prune_mask(scene: &Scene, threshold: f64) -> Vec<bool> {
    scene
        .gaussians
        .iter()
        .map(|g| view_independent_opacity(g) < threshold)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub gamma: f64,
    pub delta: f64,
    /// Confidence half-width with `delta = c (1 - gamma)`.
    pub c: f64,
    pub objective: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self::from_gamma_c(SPLIT_GAMMA, SPLIT_DELTA / (1.0 - SPLIT_GAMMA))
    }
}

impl SplitParams {
    pub fn from_gamma_c(gamma: f64, c: f64) -> Self {
        Self {
            gamma,
            delta: c * (1.0 - gamma),
            c,
            objective: split_objective(gamma, c * (1.0 - gamma)),
        }
    }
}

/// Unit direction and scale of the largest axis.
pub fn split_axis(g: &Gaussian3) -> (Vector3<f64>, f64) {
    let r = g.rotation_matrix();
    let s_max = g.max_scale();
    let canon = |i: usize| -> Vector3<f64> {
        let v: Vector3<f64> = r.column(i).into_owned();
        let lead = v.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
        if lead < 0.0 {
            -v
        } else {
            v
        }
    };
    let best = (0..3)
        .filter(|&i| s_max * s_max - g.scale[i] * g.scale[i] <= TIE_TOLERANCE)
        .map(canon)
        .max_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one axis attains the maximum");
    (best, s_max)
}

/// Children at `μ ± δ s_max e` with every scale multiplied by `γ`.
pub fn split(g: &Gaussian3, params: &SplitParams) -> (Gaussian3, Gaussian3) {
    let (e, s_max) = split_axis(g);
    let offset = e * (params.delta * s_max);
    let child = |sign: f64| Gaussian3 {
        mean: g.mean + offset * sign,
        scale: g.scale * params.gamma,
        ..g.clone()
    };
    (child(1.0), child(-1.0))
}

/// Normalised 1D split problem: `∫ (T_old σ_old - T_new σ_new)^2` on a
/// fixed grid, transmittance accumulated from the left edge.
pub fn split_objective(gamma: f64, delta: f64) -> f64 {
    let h = (GRID_MAX - GRID_MIN) / (GRID_POINTS - 1) as f64;
    let g2 = 2.0 * gamma * gamma;
    let mut tau_old = 0.0;
    let mut tau_new = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut acc = 0.0;
    for i in 0..GRID_POINTS {
        let t = GRID_MIN + h * i as f64;
        let s_old = (-0.5 * t * t).exp();
        let s_new = (-(t - delta).powi(2) / g2).exp() + (-(t + delta).powi(2) / g2).exp();
        if let Some((p_old, p_new, p_f)) = prev {
            tau_old += 0.5 * h * (p_old + s_old);
            tau_new += 0.5 * h * (p_new + s_new);
            let f = ((-tau_old).exp() * s_old - (-tau_new).exp() * s_new).powi(2);
            acc += 0.5 * h * (p_f + f);
            prev = Some((s_old, s_new, f));
        } else {
            let f = (s_old - s_new).powi(2);
            prev = Some((s_old, s_new, f));
        }
    }
    acc
}

/// Minimises [`split_objective`] over `(c, γ)` under `δ = c (1 - γ)`.
pub fn split_optimize() -> Result<SplitParams> {
    let f = |x: &[f64]| {
        let (c, gamma) = (x[0], x[1]);
        if !(gamma > 0.0 && gamma <= 1.0) || !(c >= 0.0) {
            return f64::INFINITY;
        }
        split_objective(gamma, c * (1.0 - gamma))
    };
    let m = nelder_mead(f, &[1.5, 0.6], 0.1, 1e-10, 1e-15, 5000)?;
    let (c, gamma) = (m.x[0], m.x[1]);
    Ok(SplitParams {
        gamma,
        delta: c * (1.0 - gamma),
        c,
        objective: m.value,
    })
}
