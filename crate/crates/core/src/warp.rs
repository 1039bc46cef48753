//! Monotone warp of ray distance onto `[0, 1]` built on the power transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = -1.5;
pub const DEFAULT_NEAR: f64 = 0.01;

/// `f_λ(x) = (a/λ)((x/a + 1)^λ - 1)` with `a = |λ - 1|`; the limits at
/// `λ = 0` and `λ = 1` are `ln(1 + x)` and `x`.
pub fn power_transform(x: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return x;
    }
    if lambda == 0.0 {
        return x.ln_1p();
    }
    let a = (lambda - 1.0).abs();
    a / lambda * (lambda * (x / a).ln_1p()).exp_m1()
}

/// `f_λ'(x) = (x/a + 1)^(λ - 1)`.
pub fn power_transform_deriv(x: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return 1.0;
    }
    let a = (lambda - 1.0).abs();
    ((lambda - 1.0) * (x / a).ln_1p()).exp()
}

/// `lim_{x→∞} f_λ(x)`; finite only for `λ < 0`.
pub fn power_transform_limit(lambda: f64) -> f64 {
    if lambda < 0.0 {
        -(lambda - 1.0).abs() / lambda
    } else {
        f64::INFINITY
    }
}

/// Inverse of [`power_transform`] on its range.
pub fn power_transform_inverse(y: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return y;
    }
    if lambda == 0.0 {
        return y.exp_m1();
    }
    let a = (lambda - 1.0).abs();
    a * ((lambda * y / a).ln_1p() / lambda).exp_m1()
}

/// The warp `ĝ(t) = (f(t) - f(t_n)) / (f(t_f) - f(t_n))` with `f(t) = f_λ(2t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WarpParams", into = "WarpParams")]
pub struct WarpConfig {
    lambda: f64,
    near: f64,
    far: f64,
    f_near: f64,
    f_far: f64,
}

#[derive(Serialize, Deserialize)]
struct WarpParams {
    lambda: f64,
    near: f64,
    #[serde(with = "crate::io::infinite_f64")]
    far: f64,
}

impl TryFrom<WarpParams> for WarpConfig {
    type Error = Error;
    fn try_from(p: WarpParams) -> Result<Self> {
        WarpConfig::new(p.lambda, p.near, p.far)
    }
}

impl From<WarpConfig> for WarpParams {
    fn from(w: WarpConfig) -> Self {
        Self {
            lambda: w.lambda,
            near: w.near,
            far: w.far,
        }
    }
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self::new(DEFAULT_LAMBDA, DEFAULT_NEAR, f64::INFINITY).expect("default warp is valid")
    }
}

impl WarpConfig {
    /// `far = f64::INFINITY` selects the unbounded mode.
    pub fn new(lambda: f64, near: f64, far: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda {lambda} is not finite")));
        }
        if !(near >= 0.0) || !near.is_finite() || !(far > near) {
            return Err(Error::InvalidConfig(format!(
                "warp bounds must satisfy 0 <= near < far, got [{near}, {far}]"
            )));
        }
        let f_near = power_transform(2.0 * near, lambda);
        let f_far = if far.is_infinite() {
            power_transform_limit(lambda)
        } else {
            power_transform(2.0 * far, lambda)
        };
        if !f_far.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "an unbounded far plane needs lambda < 0, got {lambda}"
            )));
        }
        if !(f_far > f_near) {
            return Err(Error::InvalidConfig(
                "warp range collapses: f(far) <= f(near)".into(),
            ));
        }
        Ok(Self {
            lambda,
            near,
            far,
            f_near,
            f_far,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn is_unbounded(&self) -> bool {
        self.far.is_infinite()
    }

    fn span(&self) -> f64 {
        self.f_far - self.f_near
    }

    pub fn warp(&self, t: f64) -> f64 {
        if t == f64::INFINITY {
            return (self.f_far - self.f_near) / self.span();
        }
        (power_transform(2.0 * t, self.lambda) - self.f_near) / self.span()
    }

    pub fn warp_deriv(&self, t: f64) -> f64 {
        if t == f64::INFINITY {
            return 0.0;
        }
        2.0 * power_transform_deriv(2.0 * t, self.lambda) / self.span()
    }

    /// Maps a warped distance in `[0, 1]` back to ray distance.
    pub fn unwarp(&self, g: f64) -> f64 {
        if g >= 1.0 {
            return self.far;
        }
        let y = self.f_near + g * self.span();
        0.5 * power_transform_inverse(y, self.lambda)
    }
}
