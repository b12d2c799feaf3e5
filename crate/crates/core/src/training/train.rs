use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::optim::{clip_global_norm, Adam};
use super::Example;
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_atomic};
use crate::objectives::Regime;
use crate::rng::{derive_seed, seeded};
use crate::separator::{forward, save_checkpoint, ModelParams};
use crate::tensor::{Tape, Tensor};

fn default_lr() -> f64 {
    15e-5
}
fn one() -> usize {
    1
}
fn five() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "one")]
    pub batch_size: usize,
    pub regime: Regime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "five")]
    pub grad_clip_norm: f64,
    /// Optimizer steps between checkpoints; 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_interval: usize,
    /// Halve the learning rate when validation SI-SDRi fails to improve for an epoch.
    #[serde(default)]
    pub halve_on_plateau: bool,
    /// Omit wall-clock times so logs are bit-identical across runs.
    #[serde(default)]
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, regime: Regime) -> Self {
        TrainConfig {
            epochs,
            learning_rate: default_lr(),
            batch_size: 1,
            regime,
            seed: 0,
            grad_clip_norm: five(),
            checkpoint_interval: 0,
            halve_on_plateau: false,
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Best permutation of the batch's last example (pit regime only).
    pub perm: Option<Vec<usize>>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub si_sdr_evals: usize,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation SI-SDRi per region under the validation majority mapping.
    pub val_sisdri: Vec<f64>,
    pub val_mean_sisdri: Option<f64>,
    pub val_majority: Option<String>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Step(StepRecord),
    Epoch(EpochRecord),
}

impl TrainLog {
    /// JSON-lines, steps first, then epochs.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let lines = self
            .steps
            .iter()
            .cloned()
            .map(LogLine::Step)
            .chain(self.epochs.iter().cloned().map(LogLine::Epoch));
        for line in lines {
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut log = TrainLog::default();
        for line in read_jsonl::<LogLine>(path)? {
            match line {
                LogLine::Step(s) => log.steps.push(s),
                LogLine::Epoch(e) => log.epochs.push(e),
            }
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

/// Loss, gradients and outcome of one example.
pub fn example_gradients(
    params: &ModelParams,
    example: &Example,
    regime: Regime,
) -> Result<(f64, BTreeMap<String, Tensor>, crate::objectives::LossOutcome)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let y = tape.constant(example.mixture.clone());
    let out = forward(&mut tape, &bound, &params.config, y)?;
    let (loss, outcome) = tape.separation_loss(out.estimates, &example.targets, regime)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let map = bound
        .vars
        .iter()
        .map(|(name, &v)| (name.clone(), grads.get_or_zeros(v, tape.shape(v))))
        .collect();
    Ok((value, map, outcome))
}

/// Training loop. Examples are visited in a per-epoch shuffled order derived
/// from the seed; batches average gradients over their examples.
///
/// Checkpoints go to `out_dir` when given: `step_<n>.ckpt` every
/// `checkpoint_interval` steps and `final.ckpt` at the end.
pub fn train(
    mut params: ModelParams,
    train_set: &[Example],
    val_set: &[Example],
    labels: &[String],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    params.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut log = TrainLog::default();
    let mut last_good: Option<PathBuf> = None;
    let mut best_val = f64::NEG_INFINITY;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seeded(derive_seed(cfg.seed, &[0x7368, epoch as u64])));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut loss_sum = 0.0;
            let mut evals = 0;
            let mut perm = None;
            for &i in batch {
                let (loss, grads, outcome) = example_gradients(&params, &train_set[i], cfg.regime)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        checkpoint: last_good,
                    });
                }
                loss_sum += loss;
                evals += outcome.stats.si_sdr_evals;
                if cfg.regime == Regime::Pit {
                    perm = Some(outcome.perm);
                }
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            let k = batch.len() as f64;
            acc.values_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v /= k));
            let grad_norm = clip_global_norm(&mut acc, cfg.grad_clip_norm);
            if !grad_norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    checkpoint: last_good,
                });
            }
            adam.update(&mut params, &acc);
            let loss = loss_sum / k;
            epoch_loss += loss_sum;
            log.steps.push(StepRecord {
                step,
                epoch,
                loss,
                perm,
                grad_norm,
                si_sdr_evals: evals,
                wall_time: (!cfg.deterministic).then(|| start.elapsed().as_secs_f64()),
            });
            step += 1;
            if let Some(dir) = out_dir {
                if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
                    let path = dir.join(format!("step_{step:07}.ckpt"));
                    save_checkpoint(&path, &params, serde_json::json!({ "step": step, "epoch": epoch }))?;
                    last_good = Some(path);
                }
            }
        }

        let (val_sisdri, val_mean, val_majority) = if val_set.is_empty() {
            (Vec::new(), None, None)
        } else {
            let ev = evaluate(&params, val_set, labels, "val", "")?;
            let per_region = ev.report.regions.iter().map(|r| r.sisdri).collect();
            (per_region, Some(ev.report.avg_sisdri), Some(ev.census.majority_label()))
        };
        if let (true, Some(val_mean)) = (cfg.halve_on_plateau, val_mean) {
            if val_mean <= best_val {
                adam.learning_rate *= 0.5;
            } else {
                best_val = val_mean;
            }
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_sisdri,
            val_mean_sisdri: val_mean,
            val_majority,
            learning_rate: adam.learning_rate,
        });
    }
    if let Some(dir) = out_dir {
        save_checkpoint(
            &dir.join("final.ckpt"),
            &params,
            serde_json::json!({ "step": step, "regime": cfg.regime }),
        )?;
    }
    Ok((params, log))
}
