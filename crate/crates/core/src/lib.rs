//! CPU reference renderer for 3D Gaussian mixtures using per-ray density
//! moments and order-independent transmittance bounds.

pub mod adc;
pub mod bounds;
pub mod camera;
pub mod error;
pub mod io;
pub mod metrics;
pub mod moments;
pub mod numeric;
pub mod oracle;
pub mod proxy;
pub mod quadrature;
pub mod render;
pub mod scene;
pub mod selftest;
pub mod sh;
pub mod synthetic;
pub mod warp;

pub use error::{Error, Result};
