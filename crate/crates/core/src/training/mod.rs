//! Optimization loop, evaluation and the training log.

mod eval;
mod optim;
mod train;

pub use eval::{evaluate, score_estimates, Evaluation, ExampleMetrics, MetricsReport, RegionMetrics};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use train::{example_gradients, train, EpochRecord, StepRecord, TrainConfig, TrainLog};

use crate::acoustics::Point3;
use crate::dataset::{ManifestRecord, MixtureExample};
use crate::error::Result;
use crate::tensor::Tensor;

/// Model-ready item: mixture `[M, T]` and per-region targets `[R, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub mixture: Tensor,
    pub targets: Tensor,
    pub reference: usize,
    pub active: Vec<bool>,
    pub positions: Vec<Point3>,
}

impl Example {
    pub fn from_mixture(record: &ManifestRecord, mix: &MixtureExample, reference: usize) -> Result<Self> {
        Ok(Example {
            id: record.id(),
            mixture: Tensor::from_rows(&mix.mics)?,
            targets: Tensor::from_rows(&mix.targets)?,
            reference,
            active: record.active.clone(),
            positions: record.positions.clone(),
        })
    }

    /// All target rows when every region has a talker.
    pub fn active_targets(&self) -> Option<Vec<Vec<f64>>> {
        self.active
            .iter()
            .all(|&a| a)
            .then(|| self.targets.rows().map(<[f64]>::to_vec).collect())
    }
}
