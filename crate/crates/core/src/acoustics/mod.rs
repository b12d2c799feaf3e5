//! Shoebox-room impulse responses via the image-source method.

mod cache;
mod decay;
mod image;
mod room;

pub use cache::RirCache;
pub use decay::schroeder_t60;
pub use image::{simulate_array_rirs, simulate_rir, simulate_rir_with_beta, ImageOrder, KERNEL_TAPS};
pub use room::{reflection_coefficient, sabine_absorption, ArraySpec, RoomSpec, WallModel};

use serde::{Deserialize, Serialize};

/// Cartesian position in meters.
pub type Point3 = [f64; 3];

pub fn distance(a: Point3, b: Point3) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Simulated impulse response from `source` to `mic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rir {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub source: Point3,
    pub mic: Point3,
    pub t60: f64,
}

impl Rir {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}
