use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{chunk_count, conv_output_len};

/// Hyperparameters of the triple-path separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_mics: usize,
    pub num_regions: usize,
    pub features: usize,
    /// Encoder/decoder window in samples.
    pub window: usize,
    pub hop: usize,
    /// Chunk length `K` in frames (50% overlap).
    pub chunk: usize,
    pub num_blocks: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Channel masked and decoded; the middle microphone when absent.
    #[serde(default)]
    pub reference_mic: Option<usize>,
}

impl ModelConfig {
    /// The full-size instance: 3 mics, 3 regions, 128 features, 1 ms window,
    /// chunks of 250 frames, 4 blocks of 8-head layers.
    pub fn full() -> Self {
        ModelConfig {
            num_mics: 3,
            num_regions: 3,
            features: 128,
            window: 16,
            hop: 8,
            chunk: 250,
            num_blocks: 4,
            heads: 8,
            ff_dim: 1024,
            reference_mic: None,
        }
    }

    /// Smallest useful instance, used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            num_mics: 2,
            num_regions: 2,
            features: 8,
            window: 16,
            hop: 8,
            chunk: 4,
            num_blocks: 1,
            heads: 2,
            ff_dim: 16,
            reference_mic: None,
        }
    }

    /// Desk-scale training instance.
    pub fn desk() -> Self {
        ModelConfig {
            num_mics: 3,
            num_regions: 3,
            features: 16,
            window: 16,
            hop: 8,
            chunk: 8,
            num_blocks: 1,
            heads: 2,
            ff_dim: 32,
            reference_mic: None,
        }
    }

    pub fn reference(&self) -> usize {
        self.reference_mic.unwrap_or(self.num_mics / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_mics == 0 || self.num_regions == 0 || self.features == 0 || self.num_blocks == 0 {
            return fail("mics, regions, features and blocks must be positive".into());
        }
        if self.heads == 0 || self.features % self.heads != 0 {
            return fail(format!("features {} not divisible by {} heads", self.features, self.heads));
        }
        if self.window == 0 || self.window % 2 != 0 || self.hop * 2 != self.window {
            return fail(format!("hop {} must be half the window {}", self.hop, self.window));
        }
        if self.chunk == 0 || self.chunk % 2 != 0 {
            return fail(format!("chunk {} must be positive and even", self.chunk));
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        if self.reference() >= self.num_mics {
            return fail(format!("reference mic {} out of range", self.reference()));
        }
        Ok(())
    }

    /// Encoder frames for `samples` input samples.
    pub fn frames(&self, samples: usize) -> Option<usize> {
        conv_output_len(samples, self.window, self.hop)
    }

    pub fn chunks(&self, frames: usize) -> usize {
        chunk_count(frames, self.chunk)
    }
}
