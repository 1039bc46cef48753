//! Optical-depth bounds from truncated moment sequences.
//!
//! For a query depth `η` the canonical representation is the unique
//! `(n+1)`-atom measure that reproduces the moments and has an atom at `η`.
//! The mass strictly before `η` is a lower bound on the optical depth up to
//! `η`; adding the atom at `η` gives the upper bound.

use std::f64::consts::PI;

use arrayvec::ArrayVec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{MomentKind, MomentVector};
use crate::numeric::{
    complex_roots, complex_roots_small, real_rooted_roots, real_roots_unclamped, vandermonde_in_place,
    vandermonde_weights, MAX_SMALL_DEGREE,
};

pub const DEFAULT_BETA: f64 = 0.25;

/// Points closer than this are merged before the Vandermonde solve.
pub const MERGE_DISTANCE: f64 = 1e-7;

/// Largest support handled on the stack.
const SMALL: usize = MAX_SMALL_DEGREE + 1;

/// `(L, U)` of a pinned measure whose first point is the query.
fn split_points(points: &[f64], weights: impl Iterator<Item = f64>) -> (f64, f64) {
    let eta = points[0];
    let mut lower = 0.0;
    let mut atom = 0.0;
    for (i, (x, w)) in points.iter().zip(weights).enumerate() {
        if i == 0 {
            atom = w;
        } else if *x < eta {
            lower += w;
        }
    }
    (lower, lower + atom)
}

/// Bias ladder tried in order until the moment matrix factorises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasSchedule {
    pub start: f64,
    pub factor: f64,
    pub max: f64,
}

impl Default for BiasSchedule {
    fn default() -> Self {
        Self {
            start: 6e-5,
            factor: 10.0,
            max: 6e-2,
        }
    }
}

impl BiasSchedule {
    /// A ladder starting at round-off, for moments of exact atomic measures.
    pub fn minimal() -> Self {
        Self {
            start: 1e-15,
            factor: 10.0,
            max: 6e-2,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        let mut b = self.start;
        std::iter::from_fn(move || {
            if b > self.max * (1.0 + 1e-12) {
                return None;
            }
            let cur = b;
            b *= self.factor;
            Some(cur)
        })
    }
}

/// Bounds on optical depth at one query depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmittanceEstimate {
    pub lower: f64,
    pub upper: f64,
    /// `(1 - β) L + β U`.
    pub tau: f64,
    pub transmittance: f64,
}

impl TransmittanceEstimate {
    pub fn from_bounds(lower: f64, upper: f64, beta: f64) -> Self {
        let tau = (1.0 - beta) * lower + beta * upper;
        Self {
            lower,
            upper,
            tau,
            transmittance: (-tau).exp(),
        }
    }

    pub fn empty() -> Self {
        Self::from_bounds(0.0, 0.0, 0.0)
    }
}

/// Atomic measure pinned at the query depth (first support point).
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalMeasure {
    /// Warped depths; trigonometric atoms are mapped back from their phase.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CanonicalMeasure {
    /// `(L, U)` in units of the normalised (unit-mass) measure.
    pub fn split(&self) -> (f64, f64) {
        split_points(&self.points, self.weights.iter().copied())
    }
}

/// Per-pixel reconstruction state; construct once, query at many depths.
#[derive(Debug, Clone)]
pub enum Bounds {
    Empty,
    Power(PowerBounds),
    Trig(TrigBounds),
}

impl Bounds {
    pub fn new(m: &MomentVector, schedule: &BiasSchedule) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::NumericOverflow { k: 0 });
        }
        if !(m.m0() > 0.0) {
            return Ok(Bounds::Empty);
        }
        match m.kind() {
            MomentKind::Power { .. } => Ok(Bounds::Power(PowerBounds::new(m, schedule)?)),
            MomentKind::Trig { .. } => Ok(Bounds::Trig(TrigBounds::new(m, schedule)?)),
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            Bounds::Empty => 0.0,
            Bounds::Power(p) => p.m0,
            Bounds::Trig(t) => t.m0,
        }
    }

    pub fn bias(&self) -> f64 {
        match self {
            Bounds::Empty => 0.0,
            Bounds::Power(p) => p.bias,
            Bounds::Trig(t) => t.bias,
        }
    }

    /// Mass of the bias reference measure before warped depth `eta`.
    pub fn reference_cdf(&self, eta: f64) -> f64 {
        match self {
            Bounds::Empty => 0.0,
            Bounds::Power(_) => eta.clamp(0.0, 1.0),
            Bounds::Trig(t) => {
                let phase = t.phase_of(eta.clamp(0.0, 1.0)) + 0.5 * t.theta;
                phase / (2.0 * PI)
            }
        }
    }

    pub fn canonical(&self, eta: f64) -> Option<CanonicalMeasure> {
        match self {
            Bounds::Empty => None,
            Bounds::Power(p) => Some(p.canonical(eta)),
            Bounds::Trig(t) => Some(t.canonical(eta)),
        }
    }

    /// Normalised `(L, U)` of the biased measure, without building the
    /// full [`CanonicalMeasure`].
    pub fn split_at(&self, eta: f64) -> Option<(f64, f64)> {
        match self {
            Bounds::Empty => None,
            Bounds::Power(p) => Some(p.split_at(eta)),
            Bounds::Trig(t) => Some(t.split_at(eta)),
        }
    }

    pub fn estimate(&self, eta: f64, beta: f64) -> TransmittanceEstimate {
        let m0 = self.mass();
        let Some((l, u)) = self.split_at(eta) else {
            return TransmittanceEstimate::empty();
        };
        // The bounds hold for the biased measure (1 - b) μ + b m0 ν; strip
        // the reference measure's known share below η.
        let b = self.bias();
        let share = b * self.reference_cdf(eta);
        let (l, u) = ((l - share) / (1.0 - b), (u - share) / (1.0 - b));
        let lower = (l * m0).clamp(0.0, m0);
        let upper = (u * m0).clamp(lower, m0);
        TransmittanceEstimate::from_bounds(lower, upper, beta)
    }
}

/// One-shot reconstruction; see [`Bounds`] to amortise the factorisation.
pub fn reconstruct(
    m: &MomentVector,
    eta: f64,
    beta: f64,
    schedule: &BiasSchedule,
) -> Result<TransmittanceEstimate> {
    Ok(Bounds::new(m, schedule)?.estimate(eta, beta))
}

pub fn reconstruct_power(
    m: &MomentVector,
    eta: f64,
    beta: f64,
    schedule: &BiasSchedule,
) -> Result<TransmittanceEstimate> {
    if !matches!(m.kind(), MomentKind::Power { .. }) {
        return Err(Error::KindMismatch("expected power moments".into()));
    }
    reconstruct(m, eta, beta, schedule)
}

pub fn reconstruct_trig(
    m: &MomentVector,
    eta: f64,
    beta: f64,
    schedule: &BiasSchedule,
) -> Result<TransmittanceEstimate> {
    if !matches!(m.kind(), MomentKind::Trig { .. }) {
        return Err(Error::KindMismatch("expected trigonometric moments".into()));
    }
    reconstruct(m, eta, beta, schedule)
}

/// Hankel system of biased, normalised power moments.
#[derive(Debug, Clone)]
pub struct PowerBounds {
    m0: f64,
    bias: f64,
    /// Normalised, biased `b_0 .. b_{2n}`.
    moments: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Row-major copy of the Cholesky factor.
    lower: Vec<f64>,
}

impl PowerBounds {
    pub fn new(m: &MomentVector, schedule: &BiasSchedule) -> Result<Self> {
        let m0 = m.m0();
        let raw: Vec<f64> = m.values().iter().map(|v| v / m0).collect();
        let n = raw.len() / 2;
        let mut last = schedule.start;
        for bias in schedule.steps() {
            last = bias;
            let b: Vec<f64> = raw
                .iter()
                .enumerate()
                .map(|(k, v)| (1.0 - bias) * v + bias / (k + 1) as f64)
                .collect();
            let h = DMatrix::from_fn(n + 1, n + 1, |i, j| b[i + j]);
            if let Some(chol) = Cholesky::new(h) {
                let l = chol.l_dirty();
                let pivots: Vec<f64> = (0..=n).map(|i| l[(i, i)] * l[(i, i)]).collect();
                let largest = pivots.iter().fold(0.0f64, |m, p| m.max(*p));
                if pivots.iter().all(|p| *p > CHOLESKY_FLOOR * largest && p.is_finite()) {
                    let lm = chol.l();
                    let lower = (0..=n).flat_map(|i| (0..=n).map(move |j| (i, j))).map(|ij| lm[ij]).collect();
                    return Ok(Self {
                        m0,
                        bias,
                        moments: b,
                        chol,
                        lower,
                    });
                }
            }
        }
        Err(Error::DegenerateMoments { bias: last })
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Normalised, biased moments the bounds are computed from.
    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// Coefficients of the kernel polynomial `ζ(x)^T H^-1 ζ(η)`.
    pub fn kernel(&self, eta: f64) -> Vec<f64> {
        let n = self.moments.len() / 2;
        let zeta = DVector::from_fn(n + 1, |k, _| eta.powi(k as i32));
        self.chol.solve(&zeta).iter().copied().collect()
    }

    fn kernel_small(&self, eta: f64) -> ArrayVec<f64, SMALL> {
        let n1 = self.moments.len() / 2 + 1;
        let l = &self.lower;
        let mut y: ArrayVec<f64, SMALL> = ArrayVec::new();
        let mut p = 1.0;
        for i in 0..n1 {
            let mut v = p;
            for (j, yj) in y.iter().enumerate() {
                v -= l[i * n1 + j] * yj;
            }
            y.push(v / l[i * n1 + i]);
            p *= eta;
        }
        for i in (0..n1).rev() {
            let mut v = y[i];
            for j in i + 1..n1 {
                v -= l[j * n1 + i] * y[j];
            }
            y[i] = v / l[i * n1 + i];
        }
        y
    }

    /// [`Self::canonical`] followed by [`CanonicalMeasure::split`].
    pub fn split_at(&self, eta: f64) -> (f64, f64) {
        if self.moments.len() / 2 + 1 > SMALL {
            return self.canonical(eta).split();
        }
        let kernel = self.kernel_small(eta);
        let Some(mut roots) = real_rooted_roots(&kernel) else {
            return self.canonical(eta).split();
        };
        roots.sort_by(f64::total_cmp);
        let mut points: ArrayVec<f64, SMALL> = ArrayVec::new();
        points.push(eta);
        for r in roots {
            if r.is_finite() && points.iter().all(|p| (p - r).abs() >= MERGE_DISTANCE) {
                points.push(r);
            }
        }
        let mut weights: ArrayVec<f64, SMALL> = self.moments[..points.len()].iter().copied().collect();
        vandermonde_in_place(&points, &mut weights);
        split_points(&points, weights.into_iter())
    }

    pub fn canonical(&self, eta: f64) -> CanonicalMeasure {
        let roots = real_roots_unclamped(&self.kernel(eta)).roots;
        let mut points = vec![eta];
        for r in roots {
            if r.is_finite() && points.iter().all(|p| (p - r).abs() >= MERGE_DISTANCE) {
                points.push(r);
            }
        }
        let rhs = &self.moments[..points.len()];
        let weights = vandermonde_weights(&points, rhs);
        CanonicalMeasure { points, weights }
    }
}

/// Levinson factorisation of the Hermitian Toeplitz matrix of biased,
/// normalised trigonometric moments.
#[derive(Debug, Clone)]
pub struct TrigBounds {
    m0: f64,
    bias: f64,
    theta: f64,
    /// `c_0 = 1, c_1 .. c_n`.
    moments: Vec<Complex64>,
    /// Backward vectors `b^(1) .. b^(n+1)` of the recursion.
    backward: Vec<Vec<Complex64>>,
}

/// Relative floor on the Cholesky pivots; smaller ones are round-off.
const CHOLESKY_FLOOR: f64 = 1e-13;

/// Relative floor on the Levinson denominators `1 - ε_b ε_f`.
const LEVINSON_FLOOR: f64 = 1e-13;

impl TrigBounds {
    pub fn new(m: &MomentVector, schedule: &BiasSchedule) -> Result<Self> {
        let MomentKind::Trig { theta, .. } = m.kind() else {
            return Err(Error::KindMismatch("expected trigonometric moments".into()));
        };
        let m0 = m.m0();
        let mk = m.trig().expect("trig kind");
        let mut last = schedule.start;
        for bias in schedule.steps() {
            last = bias;
            let mut c = vec![Complex64::new(1.0, 0.0)];
            c.extend(mk.iter().map(|z| (1.0 - bias) * z / m0));
            if let Some(backward) = levinson_backward(&c) {
                return Ok(Self {
                    m0,
                    bias,
                    theta,
                    moments: c,
                    backward,
                });
            }
        }
        Err(Error::DegenerateMoments { bias: last })
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    fn entry(&self, k: isize) -> Complex64 {
        if k >= 0 {
            self.moments[k as usize]
        } else {
            self.moments[(-k) as usize].conj()
        }
    }

    /// Solves `T q = y` with the stored backward vectors.
    pub fn solve(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut x = vec![y[0] / self.moments[0]];
        for (size, b) in self.backward.iter().enumerate().skip(1) {
            let last = size as isize;
            let mut eps = Complex64::new(0.0, 0.0);
            for (i, xi) in x.iter().enumerate() {
                eps += self.entry(last - i as isize) * xi;
            }
            x.push(Complex64::new(0.0, 0.0));
            let r = y[size] - eps;
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi += r * bi;
            }
        }
        x
    }

    fn kernel_small(&self, eta: f64) -> ArrayVec<Complex64, SMALL> {
        let w = Complex64::from_polar(1.0, self.phase_of(eta));
        let mut x: ArrayVec<Complex64, SMALL> = ArrayVec::new();
        x.push(1.0 / self.moments[0]);
        let mut y = w;
        for (size, b) in self.backward.iter().enumerate().skip(1) {
            let last = size as isize;
            let mut eps = Complex64::new(0.0, 0.0);
            for (i, xi) in x.iter().enumerate() {
                eps += self.entry(last - i as isize) * xi;
            }
            x.push(Complex64::new(0.0, 0.0));
            let r = y - eps;
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi += r * bi;
            }
            y *= w;
        }
        for q in x.iter_mut() {
            *q = q.conj();
        }
        x
    }

    /// [`Self::canonical`] followed by [`CanonicalMeasure::split`].
    pub fn split_at(&self, eta: f64) -> (f64, f64) {
        if self.moments.len() > SMALL {
            return self.canonical(eta).split();
        }
        let w = Complex64::from_polar(1.0, self.phase_of(eta));
        let mut nodes: ArrayVec<Complex64, SMALL> = ArrayVec::new();
        nodes.push(w);
        for r in complex_roots_small(&self.kernel_small(eta)) {
            let norm = r.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                continue;
            }
            let z = r / norm;
            if nodes.iter().all(|p| (p - z).norm() >= MERGE_DISTANCE) {
                nodes.push(z);
            }
        }
        let mut weights: ArrayVec<Complex64, SMALL> = self.moments[..nodes.len()].iter().copied().collect();
        vandermonde_in_place(&nodes, &mut weights);
        let mut points: ArrayVec<f64, SMALL> = nodes.iter().map(|&z| self.depth_of(z)).collect();
        points[0] = eta;
        split_points(&points, weights.iter().map(|w| w.re))
    }

    pub fn phase_of(&self, depth: f64) -> f64 {
        (2.0 * PI - self.theta) * depth
    }

    /// Maps a phase on the unit circle to warped depth. Phases in the guard
    /// gap are sent below 0 or above 1, whichever end is closer.
    pub fn depth_of(&self, z: Complex64) -> f64 {
        let span = 2.0 * PI - self.theta;
        let mut psi = z.arg();
        if psi < 0.0 {
            psi += 2.0 * PI;
        }
        if psi > span + 0.5 * self.theta {
            psi -= 2.0 * PI;
        }
        psi / span
    }

    pub fn kernel(&self, eta: f64) -> Vec<Complex64> {
        let w = Complex64::from_polar(1.0, self.phase_of(eta));
        let zeta: Vec<Complex64> = (0..self.moments.len()).map(|k| w.powi(k as i32)).collect();
        self.solve(&zeta).iter().map(|q| q.conj()).collect()
    }

    pub fn canonical(&self, eta: f64) -> CanonicalMeasure {
        let w = Complex64::from_polar(1.0, self.phase_of(eta));
        let mut nodes = vec![w];
        for r in complex_roots(&self.kernel(eta)) {
            let norm = r.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                continue;
            }
            let z = r / norm;
            if nodes.iter().all(|p| (p - z).norm() >= MERGE_DISTANCE) {
                nodes.push(z);
            }
        }
        let rhs = &self.moments[..nodes.len()];
        let weights = vandermonde_weights(&nodes, rhs);
        let mut points: Vec<f64> = nodes.iter().map(|&z| self.depth_of(z)).collect();
        points[0] = eta;
        CanonicalMeasure {
            points,
            weights: weights.iter().map(|w| w.re).collect(),
        }
    }

    /// Christoffel function `1 / K(z, z)` of the biased measure.
    pub fn christoffel(&self, depth: f64) -> f64 {
        let w = Complex64::from_polar(1.0, self.phase_of(depth));
        let zeta: Vec<Complex64> = (0..self.moments.len()).map(|k| w.powi(k as i32)).collect();
        let q = self.solve(&zeta);
        let k: Complex64 = zeta.iter().zip(&q).map(|(z, q)| z.conj() * q).sum();
        1.0 / k.re
    }
}

/// Backward vectors of the Levinson recursion for `T_{jl} = c_{j-l}`,
/// or `None` when the matrix is not numerically positive definite.
fn levinson_backward(c: &[Complex64]) -> Option<Vec<Vec<Complex64>>> {
    let entry = |k: isize| {
        if k >= 0 {
            c[k as usize]
        } else {
            c[(-k) as usize].conj()
        }
    };
    let t0 = c[0].re;
    if !(t0 > 0.0) {
        return None;
    }
    let mut f = vec![Complex64::new(1.0 / t0, 0.0)];
    let mut b = f.clone();
    let mut out = vec![b.clone()];
    for size in 1..c.len() {
        let last = size as isize;
        let mut eps_f = Complex64::new(0.0, 0.0);
        for (i, fi) in f.iter().enumerate() {
            eps_f += entry(last - i as isize) * fi;
        }
        let mut eps_b = Complex64::new(0.0, 0.0);
        for (i, bi) in b.iter().enumerate() {
            eps_b += entry(-(i as isize + 1)) * bi;
        }
        let den = Complex64::new(1.0, 0.0) - eps_b * eps_f;
        if !(den.re > LEVINSON_FLOOR) || den.im.abs() > 1e-8 {
            return None;
        }
        let mut f_ext = f.clone();
        f_ext.push(Complex64::new(0.0, 0.0));
        let mut b_ext = vec![Complex64::new(0.0, 0.0)];
        b_ext.extend_from_slice(&b);
        f = f_ext
            .iter()
            .zip(&b_ext)
            .map(|(fi, bi)| (fi - eps_f * bi) / den)
            .collect();
        b = b_ext
            .iter()
            .zip(&f_ext)
            .map(|(bi, fi)| (bi - eps_b * fi) / den)
            .collect();
        if !f.iter().chain(&b).all(|z| z.is_finite()) {
            return None;
        }
        out.push(b.clone());
    }
    Some(out)
}
