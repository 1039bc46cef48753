//! Small numerical kernels shared across modules: exact summation,
//! adaptive Gauss–Kronrod quadrature, inverse normal CDF, Vandermonde
//! solves, polynomial roots and Nelder–Mead.

use std::collections::BinaryHeap;

use arrayvec::ArrayVec;

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Correctly rounded floating-point sum, independent of insertion order
/// (non-overlapping partial sums).
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    special: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
        self.special += other.special;
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even fix-up when the remaining partials push the
        // discarded `lo` past a tie.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = ExactSum::new();
    s.extend(values);
    s.value()
}

/// Inverse of the standard normal CDF (Acklam's rational approximation
/// followed by one Halley step against `erfc`).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * GK_WK[7];
    let mut gauss = fc * GK_WG[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        kron += GK_WK[i] * s;
        if i % 2 == 1 {
            gauss += GK_WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Segment {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) integration over `[a, b]`
/// split at `breaks`. Returns `(value, error estimate)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Result<(f64, f64)> {
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (value, err) = gk15(&f, w[0], w[1]);
            heap.push(Segment {
                a: w[0],
                b: w[1],
                value,
                err,
            });
        }
    }
    let totals = |heap: &BinaryHeap<Segment>| {
        let v = exact_sum(heap.iter().map(|s| s.value));
        let e: f64 = heap.iter().map(|s| s.err).sum();
        (v, e)
    };
    loop {
        let (v, e) = totals(&heap);
        if !v.is_finite() {
            return Err(Error::NonConvergence {
                iterations: heap.len(),
                objective: v,
            });
        }
        if e <= abs_tol.max(rel_tol * v.abs()) {
            return Ok((v, e));
        }
        if heap.len() >= max_segments {
            return Err(Error::NonConvergence {
                iterations: heap.len(),
                objective: e,
            });
        }
        let s = heap.pop().expect("non-empty when error is positive");
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            return Ok((v, e));
        }
        for (a, b) in [(s.a, m), (m, s.b)] {
            let (value, err) = gk15(&f, a, b);
            heap.push(Segment { a, b, value, err });
        }
    }
}

/// Solves `Σ_j w_j x_j^k = b_k`, `k = 0..n`, for the weights `w`
/// (Björck–Pereyra, primal system). Points must be distinct.
pub fn vandermonde_weights<T: ComplexField + Copy>(x: &[T], b: &[T]) -> Vec<T> {
    let mut w = b.to_vec();
    vandermonde_in_place(x, &mut w);
    w
}

/// [`vandermonde_weights`] overwriting the right-hand side.
pub fn vandermonde_in_place<T: ComplexField + Copy>(x: &[T], w: &mut [T]) {
    let n = x.len();
    assert_eq!(n, w.len());
    if n == 0 {
        return;
    }
    let n = n - 1;
    for k in 0..n {
        for i in (k + 1..=n).rev() {
            w[i] = w[i] - x[k] * w[i - 1];
        }
    }
    for k in (0..n).rev() {
        for i in k + 1..=n {
            w[i] = w[i] / (x[i] - x[i - k - 1]);
        }
        for i in k..n {
            w[i] = w[i] - w[i + 1];
        }
    }
}

/// Evaluates `Σ c_k x^k` (ascending coefficients) by Horner's rule.
pub fn horner<T: ComplexField + Copy>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
}

fn horner_with_deriv<T: ComplexField + Copy>(coeffs: &[T], x: T) -> (T, T) {
    let mut p = T::zero();
    let mut d = T::zero();
    for &c in coeffs.iter().rev() {
        d = d * x + p;
        p = p * x + c;
    }
    (p, d)
}

/// Real roots of a real polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct RealRoots {
    pub roots: Vec<f64>,
    /// Set when a complex pair was replaced by its real part.
    pub complex_flag: bool,
}

fn trim_leading(coeffs: &[f64]) -> &[f64] {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1].abs() <= scale * 1e-14 {
        n -= 1;
    }
    &coeffs[..n]
}

/// All roots of `Σ c_k x^k` in ascending order, unclamped; complex pairs are
/// reported by their real parts with `complex_flag` set.
pub fn real_roots_unclamped(coeffs: &[f64]) -> RealRoots {
    let c = trim_leading(coeffs);
    let mut out = RealRoots {
        roots: Vec::new(),
        complex_flag: false,
    };
    match c.len() {
        0 | 1 => {}
        2 => out.roots.push(-c[0] / c[1]),
        3 => {
            let (a, b, cc) = (c[2], c[1], c[0]);
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                let re = -b / (2.0 * a);
                let im = (-disc).sqrt() / (2.0 * a.abs());
                if im > 1e-7 * (1.0 + re.abs()) {
                    out.complex_flag = true;
                }
                out.roots.extend([re, re]);
            } else {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                let (r1, r2) = if q == 0.0 {
                    (0.0, 0.0)
                } else {
                    (q / a, cc / q)
                };
                out.roots.extend([r1, r2]);
            }
        }
        len => {
            if let Some(r) = real_rooted_roots(c) {
                out.roots.extend(r);
                out.roots.sort_by(f64::total_cmp);
                return out;
            }
            let deg = len - 1;
            let lead = c[deg];
            let comp = DMatrix::from_fn(deg, deg, |i, j| {
                if j == deg - 1 {
                    -c[i] / lead
                } else if i == j + 1 {
                    1.0
                } else {
                    0.0
                }
            });
            for z in comp.complex_eigenvalues().iter() {
                let mut x = z.re;
                for _ in 0..3 {
                    let (p, d) = horner_with_deriv(c, x);
                    if d == 0.0 {
                        break;
                    }
                    let step = p / d;
                    if !step.is_finite() {
                        break;
                    }
                    x -= step;
                }
                let polished_ok = horner(c, x).abs() <= horner(c, z.re).abs();
                let x = if polished_ok { x } else { z.re };
                if z.im.abs() > 1e-7 * (1.0 + z.re.abs()) {
                    out.complex_flag = true;
                }
                out.roots.push(x);
            }
        }
    }
    out.roots.sort_by(f64::total_cmp);
    out
}

/// Highest polynomial degree handled without heap allocation.
pub const MAX_SMALL_DEGREE: usize = 16;

/// Roots of a polynomial known to be real-rooted (kernel polynomials of
/// positive definite Hankel matrices), by Laguerre iteration with deflation.
/// `None` when the iteration meets evidence of complex roots or the degree
/// exceeds [`MAX_SMALL_DEGREE`].
pub fn real_rooted_roots(c: &[f64]) -> Option<ArrayVec<f64, MAX_SMALL_DEGREE>> {
    let c = trim_leading(c);
    if c.len() > MAX_SMALL_DEGREE + 1 {
        return None;
    }
    let mut roots = ArrayVec::new();
    let mut q: ArrayVec<f64, { MAX_SMALL_DEGREE + 1 }> = c.iter().copied().collect();
    while q.len() > 1 {
        let n = (q.len() - 1) as f64;
        let mut x = 0.5;
        let mut converged = false;
        let mut last_step = f64::INFINITY;
        for _ in 0..60 {
            let (mut p, mut d, mut dd) = (0.0, 0.0, 0.0);
            for &a in q.iter().rev() {
                dd = dd * x + 2.0 * d;
                d = d * x + p;
                p = p * x + a;
            }
            if p == 0.0 {
                converged = true;
                break;
            }
            let g = d / p;
            let h = g * g - dd / p;
            let disc = (n - 1.0) * (n * h - g * g);
            if disc < -1e-9 * (g * g).max(1.0) {
                return None;
            }
            let sq = disc.max(0.0).sqrt();
            let den = if g >= 0.0 { g + sq } else { g - sq };
            if den == 0.0 || !den.is_finite() {
                return None;
            }
            let step = n / den;
            x -= step;
            let tiny = step.abs() <= 1e-15 * (1.0 + x.abs());
            // Near a root the residual is pure rounding noise and the
            // steps stop shrinking.
            let stalled = step.abs() <= 1e-9 * (1.0 + x.abs()) && step.abs() >= 0.5 * last_step;
            if tiny || stalled {
                converged = true;
                break;
            }
            last_step = step.abs();
        }
        if !converged || !x.is_finite() {
            return None;
        }
        roots.push(x);
        // Synthetic division by (z - x), in place.
        let m = q.len() - 1;
        let mut carry = q[m];
        for k in (0..m).rev() {
            let next = q[k] + carry * x;
            q[k] = carry;
            carry = next;
        }
        q.pop();
    }
    for r in roots.iter_mut() {
        for _ in 0..2 {
            let (p, d) = horner_with_deriv(c, *r);
            if d == 0.0 {
                break;
            }
            let step = p / d;
            if step.is_finite() && horner(c, *r - step).abs() <= p.abs() {
                *r -= step;
            }
        }
    }
    Some(roots)
}

/// Roots clamped to `[0, 1]` and deduplicated within `1e-9`.
pub fn polynomial_roots_real(coeffs: &[f64]) -> RealRoots {
    let mut r = real_roots_unclamped(coeffs);
    let mut roots: Vec<f64> = r.roots.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    roots.dedup_by(|b, a| (*b - *a).abs() <= 1e-9);
    r.roots = roots;
    r
}

/// All complex roots of `Σ c_k z^k` (Aberth–Ehrlich iteration).
pub fn complex_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    if coeffs.len() <= MAX_SMALL_DEGREE + 1 {
        return complex_roots_small(coeffs).to_vec();
    }
    aberth(coeffs, Vec::new())
}

/// [`complex_roots`] for degree at most [`MAX_SMALL_DEGREE`], on the stack.
pub fn complex_roots_small(coeffs: &[Complex64]) -> ArrayVec<Complex64, MAX_SMALL_DEGREE> {
    assert!(coeffs.len() <= MAX_SMALL_DEGREE + 1, "degree too large for the stack solver");
    aberth(coeffs, ArrayVec::new())
}

trait RootBuf: std::ops::DerefMut<Target = [Complex64]> {
    fn push_root(&mut self, z: Complex64);
}

impl RootBuf for Vec<Complex64> {
    fn push_root(&mut self, z: Complex64) {
        self.push(z);
    }
}

impl<const N: usize> RootBuf for ArrayVec<Complex64, N> {
    fn push_root(&mut self, z: Complex64) {
        self.push(z);
    }
}

fn aberth<B: RootBuf>(coeffs: &[Complex64], mut z: B) -> B {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1].norm() <= scale * 1e-14 {
        n -= 1;
    }
    if n <= 1 {
        return z;
    }
    let c = &coeffs[..n];
    let deg = n - 1;
    let lead = c[deg];
    // Cauchy-style radius for the starting circle.
    let radius = 1.0 + c[..deg].iter().fold(0.0f64, |m, v| m.max((v / lead).norm()));
    let start = radius.min(2.0);
    for k in 0..deg {
        z.push_root(Complex64::from_polar(start, 0.4 + 2.0 * std::f64::consts::PI * k as f64 / deg as f64));
    }
    let mut done: ArrayVec<bool, MAX_SMALL_DEGREE> = ArrayVec::new();
    let mut done_big = Vec::new();
    let done: &mut [bool] = if deg <= MAX_SMALL_DEGREE {
        done.extend((0..deg).map(|_| false));
        &mut done
    } else {
        done_big.resize(deg, false);
        &mut done_big
    };
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for i in 0..deg {
            if done[i] {
                continue;
            }
            let (p, d) = horner_with_deriv(c, z[i]);
            if p == Complex64::new(0.0, 0.0) {
                continue;
            }
            let ratio = p / d;
            let mut rep = Complex64::new(0.0, 0.0);
            for (j, zj) in z.iter().enumerate() {
                if j != i {
                    rep += 1.0 / (z[i] - zj);
                }
            }
            let step = ratio / (1.0 - ratio * rep);
            if step.is_finite() {
                z[i] -= step;
                let rel = step.norm() / (1.0 + z[i].norm());
                done[i] = rel < 1e-15;
                moved = moved.max(rel);
            }
        }
        if moved < 1e-15 || done.iter().all(|&d| d) {
            break;
        }
    }
    z
}

/// Outcome of [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Derivative-free simplex minimisation with standard coefficients.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    x_tol: f64,
    f_tol: f64,
    max_iter: usize,
) -> Result<Minimum> {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
    };
    for it in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread <= x_tol && (worst - best).abs() <= f_tol {
            return Ok(Minimum {
                x: simplex[0].0.clone(),
                value: best,
                iterations: it,
            });
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let xr = lerp(&centroid, &simplex[n].0, -1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &simplex[n].0, -2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = lerp(&centroid, &xr, 0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = lerp(&centroid, &simplex[n].0, 0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            s.0 = lerp(&x_best, &s.0, 0.5);
            s.1 = f(&s.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Err(Error::NonConvergence {
        iterations: max_iter,
        objective: simplex[0].1,
    })
}
