use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::decay::schroeder_t60;
use super::image::{simulate_rir_with_beta, ImageOrder};
use super::Point3;
use crate::error::{Error, Result};

/// How the uniform wall reflection coefficient is derived from the T60.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallModel {
    /// Closed-form Sabine inversion; fails when the absorption would exceed one.
    Sabine,
    /// Bisection on β until the Schroeder decay of reference responses in this
    /// room matches the requested T60.
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// `(Lx, Ly, Lz)` in meters.
    pub dimensions: Point3,
    pub t60: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub wall_model: WallModel,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

fn default_sample_rate() -> f64 {
    16_000.0
}

impl RoomSpec {
    pub fn new(dimensions: Point3, t60: f64) -> Result<Self> {
        let room = RoomSpec {
            dimensions,
            t60,
            speed_of_sound: default_speed_of_sound(),
            sample_rate: default_sample_rate(),
            wall_model: WallModel::default(),
        };
        room.validate()?;
        Ok(room)
    }

    /// The car-cabin room used throughout: 3 m x 2 m x 1.5 m.
    pub fn car_cabin(t60: f64) -> Result<Self> {
        Self::new([3.0, 2.0, 1.5], t60)
    }

    pub fn with_t60(&self, t60: f64) -> Self {
        RoomSpec { t60, ..self.clone() }
    }

    pub fn with_wall_model(&self, wall_model: WallModel) -> Self {
        RoomSpec {
            wall_model,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Geometry(format!(
                "room dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        if !(self.t60 > 0.0) {
            return Err(Error::Config(format!("t60 must be positive, got {}", self.t60)));
        }
        if !(self.speed_of_sound > 0.0) || !(self.sample_rate > 0.0) {
            return Err(Error::Config("speed of sound and sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + y * z + x * z)
    }

    /// Strictly inside the room.
    pub fn contains(&self, p: Point3) -> bool {
        p.iter().zip(&self.dimensions).all(|(&v, &l)| v > 0.0 && v < l)
    }

    /// Wall reflection coefficient used for simulation under `wall_model`.
    pub fn wall_beta(&self) -> Result<f64> {
        self.validate()?;
        match self.wall_model {
            WallModel::Sabine => reflection_coefficient(self),
            WallModel::Calibrated => calibrated_beta(self),
        }
    }
}

/// Sabine absorption `α = 24 ln(10) V / (c S T60)`.
pub fn sabine_absorption(room: &RoomSpec) -> f64 {
    24.0 * std::f64::consts::LN_10 * room.volume() / (room.speed_of_sound * room.surface() * room.t60)
}

/// Uniform reflection coefficient `β = sqrt(1 − α)` from the Sabine inversion.
pub fn reflection_coefficient(room: &RoomSpec) -> Result<f64> {
    room.validate()?;
    let alpha = sabine_absorption(room);
    if alpha > 1.0 {
        return Err(Error::UnachievableT60 {
            t60: room.t60,
            alpha,
        });
    }
    Ok((1.0 - alpha).sqrt())
}

/// Radical inverse of `i` in `base`: the Halton sequence coordinate.
fn halton(mut i: usize, base: usize) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const CALIBRATION_PAIRS: usize = 16;

/// Source/mic pairs spread through the room by a Halton sequence, kept
/// 15% away from every wall.
fn calibration_pair(k: usize) -> (Point3, Point3) {
    let at = |base: usize| 0.15 + 0.7 * halton(k + 1, base);
    ([at(2), at(3), at(5)], [at(7), at(11), at(13)])
}

/// Median decay time over the calibration pairs; the median keeps a few
/// near-degenerate geometries from pulling the calibration.
fn median_decay_time(room: &RoomSpec, beta: f64) -> Result<f64> {
    let mut times = Vec::with_capacity(CALIBRATION_PAIRS);
    for k in 0..CALIBRATION_PAIRS {
        let (s, m) = calibration_pair(k);
        let rir = simulate_rir_with_beta(room, beta, scale(s, room.dimensions), scale(m, room.dimensions), ImageOrder::Auto)?;
        times.push(schroeder_t60(&rir.samples, room.sample_rate).unwrap_or(0.0));
    }
    times.sort_by(f64::total_cmp);
    Ok(0.5 * (times[CALIBRATION_PAIRS / 2 - 1] + times[CALIBRATION_PAIRS / 2]))
}

fn scale(frac: Point3, dims: Point3) -> Point3 {
    [frac[0] * dims[0], frac[1] * dims[1], frac[2] * dims[2]]
}

fn calibrated_beta(room: &RoomSpec) -> Result<f64> {
    type Key = [u64; 6];
    static MEMO: OnceLock<Mutex<HashMap<Key, f64>>> = OnceLock::new();
    let key: Key = [
        room.dimensions[0].to_bits(),
        room.dimensions[1].to_bits(),
        room.dimensions[2].to_bits(),
        room.t60.to_bits(),
        room.speed_of_sound.to_bits(),
        room.sample_rate.to_bits(),
    ];
    let memo = MEMO.get_or_init(Default::default);
    if let Some(&beta) = memo.lock().unwrap().get(&key) {
        return Ok(beta);
    }
    // The response is truncated at the T60 span, so the measured decay rises
    // with beta, peaks well short of rigid walls and falls again. Step up to
    // the first crossing, then refine with Illinois false position.
    let excess = |beta: f64| -> Result<f64> { Ok(median_decay_time(room, beta)? - room.t60) };
    let unachievable = || {
        Error::Config(format!(
            "T60 of {} s exceeds what the truncated responses of this room can show",
            room.t60
        ))
    };
    let (mut lo, mut f_lo) = (0.0f64, excess(0.0)?);
    let (mut hi, mut f_hi) = (lo, f_lo);
    while f_hi < 0.0 {
        if hi >= 0.9 {
            return Err(unachievable());
        }
        (lo, f_lo) = (hi, f_hi);
        hi += 0.1;
        f_hi = excess(hi)?;
        if f_hi < f_lo {
            return Err(unachievable());
        }
    }
    let mut beta = hi;
    let mut last_side = 0;
    for _ in 0..60 {
        beta = if f_hi > f_lo { (lo * f_hi - hi * f_lo) / (f_hi - f_lo) } else { 0.5 * (lo + hi) };
        let f = excess(beta)?;
        if f.abs() < 1e-4 * room.t60 || hi - lo < 1e-9 {
            break;
        }
        if f < 0.0 {
            (lo, f_lo) = (beta, f);
            if last_side < 0 {
                f_hi *= 0.5;
            }
            last_side = -1;
        } else {
            (hi, f_hi) = (beta, f);
            if last_side > 0 {
                f_lo *= 0.5;
            }
            last_side = 1;
        }
    }
    memo.lock().unwrap().insert(key, beta);
    Ok(beta)
}

/// Microphone array; positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub mic_positions: Vec<Point3>,
    pub reference_index: usize,
}

impl ArraySpec {
    /// Uniform linear array along `axis`, centered at `center`; the reference
    /// is the middle microphone.
    pub fn uniform_linear(center: Point3, spacing: f64, count: usize, axis: usize) -> Self {
        let offset = (count as f64 - 1.0) / 2.0;
        let mic_positions = (0..count)
            .map(|i| {
                let mut p = center;
                p[axis] += (i as f64 - offset) * spacing;
                p
            })
            .collect();
        ArraySpec {
            mic_positions,
            reference_index: count / 2,
        }
    }

    /// Three mics, 8 cm apart across the cabin width, centered at (0.5, 1, 1).
    pub fn car_cabin() -> Self {
        Self::uniform_linear([0.5, 1.0, 1.0], 0.08, 3, 1)
    }

    pub fn len(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mic_positions.is_empty()
    }

    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        if self.mic_positions.is_empty() {
            return Err(Error::Geometry("array has no microphones".into()));
        }
        if self.reference_index >= self.mic_positions.len() {
            return Err(Error::Geometry(format!(
                "reference index {} out of range for {} mics",
                self.reference_index,
                self.mic_positions.len()
            )));
        }
        if let Some(p) = self.mic_positions.iter().find(|p| !room.contains(**p)) {
            return Err(Error::Geometry(format!("microphone {p:?} is outside the room")));
        }
        Ok(())
    }
}
