//! Analytic per-particle density moments in the warped distance domain.
//!
//! Power moments follow a three-term recurrence, trigonometric moments a
//! closed form with a linearised complex `erf`. Both expand the warp to
//! first order, `u_t = A + B (t - m̂)`, around the particle mean.

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, ExactSum};
use crate::scene::{erf_difference, Gaussian1};
use crate::warp::WarpConfig;

pub const DEFAULT_POWER_N: usize = 4;
pub const DEFAULT_THETA: f64 = PI / 5.0;

/// `sqrt(pi/2) * erf(1)`.
pub const RAW_MOMENT_BOUND: f64 = 1.056_186_174_229_170_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MomentKind {
    Power { n: usize },
    Trig { n: usize, theta: f64 },
}

impl MomentKind {
    pub fn n(&self) -> usize {
        match *self {
            MomentKind::Power { n } | MomentKind::Trig { n, .. } => n,
        }
    }

    /// Number of stored reals: `2n + 1` for both kinds (trig interleaves
    /// real and imaginary parts after `m̃₀`).
    pub fn len(&self) -> usize {
        2 * self.n() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || n > 8 {
            return Err(Error::InvalidConfig(format!(
                "moment order n must be in 1..=8, got {n}"
            )));
        }
        if let MomentKind::Trig { theta, .. } = *self {
            if !(theta > 0.0 && theta < 2.0 * PI) {
                return Err(Error::InvalidConfig(format!(
                    "theta must lie in (0, 2π), got {theta}"
                )));
            }
        }
        Ok(())
    }
}

/// Flat moment storage; see [`MomentKind::len`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    kind: MomentKind,
    values: Vec<f64>,
}

impl MomentVector {
    pub fn zeros(kind: MomentKind) -> Self {
        Self {
            kind,
            values: vec![0.0; kind.len()],
        }
    }

    pub fn from_values(kind: MomentKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != kind.len() {
            return Err(Error::DimensionMismatch(format!(
                "{kind:?} stores {} values, got {}",
                kind.len(),
                values.len()
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn from_power(values: Vec<f64>) -> Result<Self> {
        if values.len() % 2 == 0 {
            return Err(Error::DimensionMismatch(
                "power moments come in odd counts 2n+1".into(),
            ));
        }
        let n = values.len() / 2;
        Self::from_values(MomentKind::Power { n }, values)
    }

    pub fn from_trig(m0: f64, mk: &[Complex64], theta: f64) -> Self {
        let mut values = Vec::with_capacity(1 + 2 * mk.len());
        values.push(m0);
        for z in mk {
            values.extend([z.re, z.im]);
        }
        Self {
            kind: MomentKind::Trig { n: mk.len(), theta },
            values,
        }
    }

    pub fn kind(&self) -> MomentKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn m0(&self) -> f64 {
        self.values[0]
    }

    /// `m̃₁..m̃ₙ` for trigonometric vectors.
    pub fn trig(&self) -> Option<Vec<Complex64>> {
        match self.kind {
            MomentKind::Trig { .. } => Some(
                self.values[1..]
                    .chunks_exact(2)
                    .map(|c| Complex64::new(c[0], c[1]))
                    .collect(),
            ),
            MomentKind::Power { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// First-order expansion of the warp used for one particle:
/// `u_t = offset + slope * (t - m̂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub offset: f64,
    pub slope: f64,
}

impl Linearization {
    /// Expands at the particle mean, moved onto `[t_n, t_f]` when the mean
    /// lies outside the integration range.
    pub fn at(g1: &Gaussian1, warp: &WarpConfig) -> Self {
        let c = g1.mean.clamp(warp.near(), warp.far());
        let slope = warp.warp_deriv(c);
        Self {
            offset: warp.warp(c) + slope * (g1.mean - c),
            slope,
        }
    }

    pub fn eval(&self, g1: &Gaussian1, t: f64) -> f64 {
        self.offset + self.slope * (t - g1.mean)
    }
}

/// Zeroth moment: exact optical depth of the particle over `[t_n, t_f]`.
pub fn zeroth_moment(g1: &Gaussian1, warp: &WarpConfig) -> f64 {
    if g1.amplitude == 0.0 {
        return 0.0;
    }
    let scale = g1.amplitude * g1.stddev * (PI / 2.0).sqrt();
    let k = 1.0 / (SQRT_2 * g1.stddev);
    let b_n = (warp.near() - g1.mean) * k;
    if warp.is_unbounded() {
        scale * libm::erfc(b_n)
    } else {
        scale * erf_difference(b_n, (warp.far() - g1.mean) * k)
    }
}

/// `m̂₀ .. m̂_{2n}` of one particle.
pub fn power_moments_1d(g1: &Gaussian1, warp: &WarpConfig, n: usize) -> Result<Vec<f64>> {
    let len = 2 * n + 1;
    let mut m = vec![0.0; len];
    if g1.amplitude == 0.0 {
        return Ok(m);
    }
    let lin = Linearization::at(g1, warp);
    let (a, b) = (lin.offset, lin.slope);
    let s2 = g1.stddev * g1.stddev;
    let beta = b * b * s2;
    let boundary_scale = b * g1.amplitude * s2;
    let gauss = |t: f64| {
        let z = (t - g1.mean) / g1.stddev;
        (-0.5 * z * z).exp()
    };
    let u_n = lin.eval(g1, warp.near());
    let e_n = gauss(warp.near());
    let far = if warp.is_unbounded() {
        None
    } else {
        Some((lin.eval(g1, warp.far()), gauss(warp.far())))
    };
    // Boundary correction -B(k) = B' w s² [u^{k-1} G]_{far}^{near}.
    let boundary = |k: usize| {
        let p = (k - 1) as i32;
        let near_term = u_n.powi(p) * e_n;
        let far_term = far.map_or(0.0, |(u_f, e_f)| u_f.powi(p) * e_f);
        boundary_scale * (near_term - far_term)
    };
    m[0] = zeroth_moment(g1, warp);
    for k in 1..len {
        let prev2 = if k >= 2 {
            beta * (k - 1) as f64 * m[k - 2]
        } else {
            0.0
        };
        m[k] = a * m[k - 1] + prev2 + boundary(k);
        if !m[k].is_finite() {
            return Err(Error::NumericOverflow { k });
        }
    }
    Ok(m)
}

/// First-order expansion of `erf(a + ib)` in the imaginary direction.
pub fn complex_erf_taylor(a: f64, b: f64) -> Complex64 {
    Complex64::new(libm::erf(a), b * FRAC_2_SQRT_PI * (-a * a).exp())
}

/// `(m̃₀, [m̃₁ .. m̃ₙ])` of one particle.
pub fn trig_moments_1d(
    g1: &Gaussian1,
    warp: &WarpConfig,
    n: usize,
    theta: f64,
) -> Result<(f64, Vec<Complex64>)> {
    let zero = Complex64::new(0.0, 0.0);
    if g1.amplitude == 0.0 {
        return Ok((0.0, vec![zero; n]));
    }
    let m0 = zeroth_moment(g1, warp);
    let lin = Linearization::at(g1, warp);
    let s = g1.stddev;
    let k_norm = 1.0 / (SQRT_2 * s);
    let a_n = (warp.near() - g1.mean) * k_norm;
    let a_f = (warp.far() - g1.mean) * k_norm;
    let scale = g1.amplitude * (PI / 2.0).sqrt() * s;
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let alpha = k as f64 * (2.0 * PI - theta);
        let beta = alpha * lin.slope;
        let b = s * beta / SQRT_2;
        // erf(v_f) - erf(v_n) with v = a - ib, each side linearised.
        let span = if warp.is_unbounded() {
            Complex64::new(1.0, 0.0) - complex_erf_taylor(a_n, -b)
        } else {
            let real = erf_difference(a_n, a_f);
            let imag = -b * FRAC_2_SQRT_PI * ((-a_f * a_f).exp() - (-a_n * a_n).exp());
            Complex64::new(real, imag)
        };
        let osc = Complex64::from_polar(
            (-0.5 * s * s * beta * beta).exp(),
            alpha * lin.offset,
        );
        let z = scale * osc * span;
        if !z.is_finite() {
            return Err(Error::NumericOverflow { k });
        }
        out.push(z);
    }
    Ok((m0, out))
}

/// Moments of one particle in the layout of `kind`.
pub fn particle_moments(g1: &Gaussian1, warp: &WarpConfig, kind: MomentKind) -> Result<MomentVector> {
    match kind {
        MomentKind::Power { n } => MomentVector::from_values(kind, power_moments_1d(g1, warp, n)?),
        MomentKind::Trig { n, theta } => {
            let (m0, mk) = trig_moments_1d(g1, warp, n, theta)?;
            Ok(MomentVector::from_trig(m0, &mk, theta))
        }
    }
}

/// Moments of a thin surface at depth `ĝ(m̂)` carrying the particle's full
/// optical depth.
pub fn mboit_surface_moments(g1: &Gaussian1, warp: &WarpConfig, kind: MomentKind) -> MomentVector {
    let tau = zeroth_moment(g1, warp);
    let depth = warp.warp(g1.mean.clamp(warp.near(), warp.far()));
    surface_moments(tau, depth, kind)
}

/// Moments of a single atom of mass `tau` at warped depth `depth`.
pub fn surface_moments(tau: f64, depth: f64, kind: MomentKind) -> MomentVector {
    match kind {
        MomentKind::Power { n } => {
            let values = (0..=2 * n as i32).map(|k| tau * depth.powi(k)).collect();
            MomentVector { kind, values }
        }
        MomentKind::Trig { n, theta } => {
            let mk: Vec<Complex64> = (1..=n)
                .map(|k| tau * Complex64::from_polar(1.0, k as f64 * (2.0 * PI - theta) * depth))
                .collect();
            MomentVector::from_trig(tau, &mk, theta)
        }
    }
}

/// How per-particle moments are reduced into a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumPolicy {
    /// Correctly rounded sums: bitwise identical under any ordering.
    #[default]
    Exact,
    Plain,
}

/// Running sum of moment vectors of one kind.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    kind: MomentKind,
    policy: SumPolicy,
    exact: Vec<ExactSum>,
    plain: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(kind: MomentKind, policy: SumPolicy) -> Self {
        let len = kind.len();
        match policy {
            SumPolicy::Exact => Self {
                kind,
                policy,
                exact: vec![ExactSum::new(); len],
                plain: Vec::new(),
            },
            SumPolicy::Plain => Self {
                kind,
                policy,
                exact: Vec::new(),
                plain: vec![0.0; len],
            },
        }
    }

    pub fn add(&mut self, m: &MomentVector) -> Result<()> {
        if !same_kind(m.kind, self.kind) {
            return Err(Error::KindMismatch(format!(
                "cannot add {:?} to {:?}",
                m.kind, self.kind
            )));
        }
        match self.policy {
            SumPolicy::Exact => {
                for (s, &v) in self.exact.iter_mut().zip(&m.values) {
                    s.add(v);
                }
            }
            SumPolicy::Plain => {
                for (s, &v) in self.plain.iter_mut().zip(&m.values) {
                    *s += v;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> MomentVector {
        let values = match self.policy {
            SumPolicy::Exact => self.exact.iter().map(ExactSum::value).collect(),
            SumPolicy::Plain => self.plain.clone(),
        };
        MomentVector {
            kind: self.kind,
            values,
        }
    }
}

fn same_kind(a: MomentKind, b: MomentKind) -> bool {
    match (a, b) {
        (MomentKind::Power { n: x }, MomentKind::Power { n: y }) => x == y,
        (MomentKind::Trig { n: x, theta: s }, MomentKind::Trig { n: y, theta: t }) => {
            x == y && s.to_bits() == t.to_bits()
        }
        _ => false,
    }
}

/// Component-wise sum. An empty list needs `kind` to know its shape.
pub fn accumulate(
    kind: MomentKind,
    per_gaussian: &[MomentVector],
    policy: SumPolicy,
) -> Result<MomentVector> {
    let mut acc = MomentAccumulator::new(kind, policy);
    for m in per_gaussian {
        acc.add(m)?;
    }
    Ok(acc.finish())
}

/// Checks `∫ t^k σ(t) dt >= sqrt(pi/2) erf(1) ω̂ m̂^k ŝ` by quadrature.
///
/// `None` when the particle does not satisfy `t_n <= m̂` and
/// `t_f >= m̂ + sqrt(2) ŝ`.
pub fn raw_moment_lower_bound_check(g1: &Gaussian1, k: u32, near: f64, far: f64) -> Option<bool> {
    if !(near <= g1.mean) || !(far >= g1.mean + SQRT_2 * g1.stddev) {
        return None;
    }
    if g1.amplitude == 0.0 {
        return Some(true);
    }
    let raw = raw_moment(g1, k, near, far)?;
    let bound = RAW_MOMENT_BOUND * g1.amplitude * g1.mean.powi(k as i32) * g1.stddev;
    Some(raw >= bound * (1.0 - 1e-9))
}

/// `∫_{near}^{far} t^k σ(t) dt` by adaptive quadrature over `m̂ ± 12ŝ`.
pub fn raw_moment(g1: &Gaussian1, k: u32, near: f64, far: f64) -> Option<f64> {
    let lo = near.max(g1.mean - 12.0 * g1.stddev);
    let hi = far.min(g1.mean + 12.0 * g1.stddev);
    if hi <= lo {
        return Some(0.0);
    }
    let breaks: Vec<f64> = (0..=8).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect();
    numeric::integrate(
        |t| t.powi(k as i32) * g1.density(t),
        &breaks,
        0.0,
        1e-13,
        20_000,
    )
    .ok()
    .map(|(v, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn warp() -> WarpConfig {
        WarpConfig::default()
    }

    #[test]
    fn zero_density_gives_zero() {
        let g = Gaussian1::new(0.0, 5.0, 0.5);
        assert!(power_moments_1d(&g, &warp(), 4).unwrap().iter().all(|&v| v == 0.0));
        let (m0, mk) = trig_moments_1d(&g, &warp(), 3, DEFAULT_THETA).unwrap();
        assert_eq!(m0, 0.0);
        assert!(mk.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn saturated_mass() {
        let g = Gaussian1::new(1.3, 20.0, 0.5);
        let m0 = power_moments_1d(&g, &warp(), 4).unwrap()[0];
        let expect = 1.3 * 0.5 * (2.0 * PI).sqrt();
        assert!((m0 - expect).abs() <= 1e-9 * expect);
    }

    #[test]
    fn trig_and_power_share_mass() {
        let g = Gaussian1::new(0.7, 0.3, 0.4);
        let p = power_moments_1d(&g, &warp(), 4).unwrap();
        let (m0, _) = trig_moments_1d(&g, &warp(), 5, DEFAULT_THETA).unwrap();
        assert_eq!(p[0], m0);
    }

    #[test]
    fn flat_warp_is_pure_rotation() {
        // At m̂ = ∞ the slope vanishes; emulate with a far particle on a
        // bounded warp whose slope underflows.
        let w = WarpConfig::new(-1.5, 0.01, f64::INFINITY).unwrap();
        let g = Gaussian1::new(1.0, 1e9, 1.0);
        let (m0, mk) = trig_moments_1d(&g, &w, 3, DEFAULT_THETA).unwrap();
        let lin = Linearization::at(&g, &w);
        assert!(lin.slope < 1e-20);
        for (k, z) in mk.iter().enumerate() {
            let phase = (k + 1) as f64 * (2.0 * PI - DEFAULT_THETA) * lin.offset;
            let expect = m0 * Complex64::from_polar(1.0, phase);
            assert!((z - expect).norm() < 1e-12 * m0);
        }
    }

    #[test]
    fn taylor_erf_examples() {
        assert_eq!(complex_erf_taylor(0.7, 0.0), Complex64::new(libm::erf(0.7), 0.0));
        let z = complex_erf_taylor(0.0, 0.1);
        assert_eq!(z.re, 0.0);
        assert!((z.im - 0.2 / PI.sqrt()).abs() < 1e-16);
    }

    #[test]
    fn mboit_arithmetic() {
        let m = surface_moments(0.7, 0.4, MomentKind::Power { n: 2 });
        assert!((m.values()[2] - 0.112).abs() < 1e-15);
        assert_eq!(m.values()[0], 0.7);
        let z = surface_moments(0.0, 0.4, MomentKind::Trig { n: 3, theta: 0.5 });
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulate_checks_kind() {
        let k = MomentKind::Power { n: 2 };
        let a = MomentVector::zeros(k);
        let b = MomentVector::zeros(MomentKind::Power { n: 3 });
        assert!(matches!(
            accumulate(k, &[a.clone(), b], SumPolicy::Exact),
            Err(Error::KindMismatch(_))
        ));
        assert_eq!(accumulate(k, &[], SumPolicy::Exact).unwrap(), a);
        let one = surface_moments(0.3, 0.2, k);
        assert_eq!(accumulate(k, &[one.clone()], SumPolicy::Exact).unwrap(), one);
    }

    #[test]
    fn lower_bound_inapplicable_and_trivial() {
        let g = Gaussian1::new(1.0, 0.005, 0.5);
        assert_eq!(raw_moment_lower_bound_check(&g, 2, 0.01, f64::INFINITY), None);
        let g = Gaussian1::new(0.0, 5.0, 0.5);
        assert_eq!(raw_moment_lower_bound_check(&g, 2, 0.01, f64::INFINITY), Some(true));
        let g = Gaussian1::new(1.0, 5.0, 0.5);
        assert_eq!(raw_moment_lower_bound_check(&g, 0, 0.01, f64::INFINITY), Some(true));
    }
}
