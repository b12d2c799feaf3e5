use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{simulate_rir_with_beta, ImageOrder};
use super::room::RoomSpec;
use super::{Point3, Rir};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Parameters stored next to each cached response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    key: String,
    room: RoomSpec,
    source: Point3,
    mic: Point3,
    beta: f64,
    samples: usize,
}

/// On-disk store of simulated responses: one little-endian `f32` file per
/// (room, T60, source, mic) plus a JSON sidecar of the generating parameters.
#[derive(Debug, Clone)]
pub struct RirCache {
    dir: PathBuf,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RirCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RirCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Identifies a response by everything it depends on, including the
    /// wall coefficient, so a change in calibration invalidates old entries.
    pub fn key(room: &RoomSpec, beta: f64, source: Point3, mic: Point3) -> String {
        format!(
            "room={:?};t60={};c={};fs={};walls={:?};beta={:016x};src={:?};mic={:?}",
            room.dimensions,
            room.t60,
            room.speed_of_sound,
            room.sample_rate,
            room.wall_model,
            beta.to_bits(),
            source,
            mic
        )
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let stem = format!("{:016x}", fnv1a(key.as_bytes()));
        (
            self.dir.join(format!("{stem}.f32")),
            self.dir.join(format!("{stem}.json")),
        )
    }

    /// Cached response, if present and generated from the same parameters.
    pub fn load(&self, room: &RoomSpec, source: Point3, mic: Point3) -> Result<Option<Rir>> {
        let key = Self::key(room, room.wall_beta()?, source, mic);
        let (data_path, meta_path) = self.paths(&key);
        if !data_path.exists() || !meta_path.exists() {
            return Ok(None);
        }
        let meta: Sidecar = serde_json::from_slice(
            &std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        if meta.key != key {
            return Ok(None);
        }
        let bytes = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() != meta.samples * 4 {
            return Ok(None);
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Some(Rir {
            samples,
            sample_rate: room.sample_rate,
            source,
            mic,
            t60: room.t60,
        }))
    }

    pub fn store(&self, room: &RoomSpec, beta: f64, rir: &Rir) -> Result<()> {
        let key = Self::key(room, beta, rir.source, rir.mic);
        let (data_path, meta_path) = self.paths(&key);
        let bytes: Vec<u8> = rir
            .samples
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        write_atomic(&data_path, &bytes)?;
        let meta = Sidecar {
            key,
            room: room.clone(),
            source: rir.source,
            mic: rir.mic,
            beta,
            samples: rir.samples.len(),
        };
        write_atomic(&meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())
    }

    /// Loads the response or simulates and stores it. The flag reports
    /// whether a simulation ran.
    pub fn get_or_simulate(&self, room: &RoomSpec, source: Point3, mic: Point3) -> Result<(Rir, bool)> {
        if let Some(rir) = self.load(room, source, mic)? {
            return Ok((rir, false));
        }
        let beta = room.wall_beta()?;
        let mut rir = simulate_rir_with_beta(room, beta, source, mic, ImageOrder::Auto)?;
        self.store(room, beta, &rir)?;
        // Hand back exactly what a later cache hit would return.
        rir.samples.iter_mut().for_each(|v| *v = *v as f32 as f64);
        Ok((rir, true))
    }
}
