//! Image comparison.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::render::ImageBuffer;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// Peak-1 PSNR over linear RGB; infinite for identical images.
    #[serde(with = "crate::io::infinite_f64")]
    pub psnr: f64,
    pub mse: f64,
    pub mse_per_channel: [f64; 3],
    pub max_abs_diff: f64,
    pub alpha_max_abs_diff: f64,
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn compare(a: &ImageBuffer, b: &ImageBuffer) -> Result<Comparison> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let n = a.data.len().max(1) as f64;
    let mut se = [0.0f64; 3];
    let mut max_abs = 0.0f64;
    let mut alpha_max = 0.0f64;
    for (p, q) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            let d = p[c] as f64 - q[c] as f64;
            se[c] += d * d;
            max_abs = max_abs.max(d.abs());
        }
        alpha_max = alpha_max.max((p[3] as f64 - q[3] as f64).abs());
    }
    let mse_per_channel = se.map(|s| s / n);
    let mse = mse_per_channel.iter().sum::<f64>() / 3.0;
    Ok(Comparison {
        psnr: psnr_from_mse(mse),
        mse,
        mse_per_channel,
        max_abs_diff: max_abs,
        alpha_max_abs_diff: alpha_max,
    })
}
