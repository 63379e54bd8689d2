//! Synthetic paired CT / CBCT-like data.
//!
//! Clean "CT" images are random multi-ellipse phantoms on `[0, 1]`. The
//! "CBCT" counterpart is the same phantom pushed through a sparse-view
//! parallel-beam acquisition and filtered backprojection, with reduced
//! contrast, a radial cupping bias and additive noise.

mod dataset;
mod degrade;
mod tomo;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

pub use dataset::{build_dataset, DatasetManifest, ManifestItem, Role};
pub use degrade::{degrade_to_cbct, DegradationConfig};
pub use tomo::{equally_spaced_angles, fbp_reconstruct, radon_transform, ramp_kernel};

pub const MIN_PHANTOM_SIZE: usize = 16;

/// An ellipse in normalised image coordinates (`[-1, 1]²`, y pointing down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }
}

/// A body outline plus interior structures. Interior ellipses only count
/// where they overlap the body, so everything outside the body is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub body: Ellipse,
    pub interior: Vec<Ellipse>,
}

impl PhantomSpec {
    /// One body ellipse, 3–8 soft-tissue structures of either sign, and 0–3
    /// small dense "bone" inserts.
    pub fn random(seed: u64, size: usize) -> Result<Self> {
        if size < MIN_PHANTOM_SIZE {
            return Err(Error::InvalidArgument(format!(
                "phantom size must be >= {MIN_PHANTOM_SIZE}, got {size}"
            )));
        }
        let mut rng = stream(seed);
        let body = Ellipse {
            center: (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
            semi_axes: (rng.random_range(0.62..0.85), rng.random_range(0.5..0.72)),
            angle: rng.random_range(-0.3..0.3),
            intensity: rng.random_range(0.35..0.5),
        };
        let inside_body = |rng: &mut crate::rng::StreamRng| {
            let r = 0.65 * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let (u, v) = (r * phi.cos() * body.semi_axes.0, r * phi.sin() * body.semi_axes.1);
            let (s, c) = body.angle.sin_cos();
            (body.center.0 + u * c - v * s, body.center.1 + u * s + v * c)
        };
        let mut interior = Vec::new();
        for _ in 0..rng.random_range(3..=8) {
            let magnitude = rng.random_range(0.08..0.3);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            interior.push(Ellipse {
                center: inside_body(&mut rng),
                semi_axes: (rng.random_range(0.12..0.3), rng.random_range(0.12..0.3)),
                angle: rng.random_range(0.0..PI),
                intensity: sign * magnitude,
            });
        }
        for _ in 0..rng.random_range(0..=3) {
            interior.push(Ellipse {
                center: inside_body(&mut rng),
                semi_axes: (rng.random_range(0.03..0.08), rng.random_range(0.03..0.08)),
                angle: rng.random_range(0.0..PI),
                intensity: rng.random_range(0.35..0.5),
            });
        }
        Ok(PhantomSpec { size, body, interior })
    }

    /// Samples the phantom at pixel centres into `[1, size, size]`, clamped to `[0, 1]`.
    pub fn render(&self) -> Tensor {
        let n = self.size;
        let mut data = Vec::with_capacity(n * n);
        for row in 0..n {
            let y = (row as f64 + 0.5) / n as f64 * 2.0 - 1.0;
            for col in 0..n {
                let x = (col as f64 + 0.5) / n as f64 * 2.0 - 1.0;
                let v = if self.body.contains(x, y) {
                    let extra: f64 = self
                        .interior
                        .iter()
                        .filter(|e| e.contains(x, y))
                        .map(|e| e.intensity)
                        .sum();
                    (self.body.intensity + extra).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                data.push(v);
            }
        }
        Tensor::from_parts(vec![1, n, n], data)
    }
}

pub fn generate_phantom(seed: u64, size: usize) -> Result<Tensor> {
    Ok(PhantomSpec::random(seed, size)?.render())
}

/// Linear map of `[lo, hi]` onto `[-1, 1]`, clamping values outside the window.
pub fn normalize_intensity(image: &Tensor, window: (f64, f64)) -> Result<Tensor> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "normalisation window needs lo < hi, got ({lo}, {hi})"
        )));
    }
    Ok(image.map(|v| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)))
}
