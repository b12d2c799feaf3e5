use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{AttentionVars, LinearVars, Tape, Tensor, Var};

/// How a parameter starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(±1/sqrt(fan_in))`.
    Uniform { fan_in: usize },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![fan_in, fan_out],
        init: Init::Uniform { fan_in },
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![fan_out],
        init: Init::Uniform { fan_in },
    });
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, f: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![f],
        init: Init::Constant(1.0),
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![f],
        init: Init::Constant(0.0),
    });
}

/// The three transformer layers of each block, in application order.
pub const PATHS: [&str; 3] = ["inter_channel", "intra_chunk", "inter_chunk"];

/// Every named parameter of a model with this config, in a fixed order.
pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let (f, w) = (config.features, config.window);
    let mut out = Vec::new();
    for name in ["encoder.weight", "decoder.weight"] {
        out.push(ParamSpec {
            name: name.into(),
            shape: vec![f, 1, w],
            init: Init::Uniform { fan_in: w },
        });
    }
    norm_specs(&mut out, "input_norm", f);
    linear_specs(&mut out, "input_linear", f, f);
    for b in 0..config.num_blocks {
        for path in PATHS {
            let p = format!("blocks.{b}.{path}");
            for proj in ["query", "key", "value", "output"] {
                linear_specs(&mut out, &format!("{p}.attn.{proj}"), f, f);
            }
            norm_specs(&mut out, &format!("{p}.norm1"), f);
            linear_specs(&mut out, &format!("{p}.ff1"), f, config.ff_dim);
            linear_specs(&mut out, &format!("{p}.ff2"), config.ff_dim, f);
            norm_specs(&mut out, &format!("{p}.norm2"), f);
        }
    }
    out.push(ParamSpec {
        name: "prelu.slope".into(),
        shape: vec![1],
        init: Init::Constant(0.25),
    });
    linear_specs(&mut out, "flatten", f, config.num_regions * f);
    linear_specs(&mut out, "gate_tanh", f, f);
    linear_specs(&mut out, "gate_sigmoid", f, f);
    linear_specs(&mut out, "mask", f, f);
    out
}

/// Exact number of trainable scalars.
pub fn count_params(config: &ModelConfig) -> usize {
    layout(config).iter().map(|p| p.shape.iter().product::<usize>()).sum()
}

fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Named parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Seeded initialization; each tensor draws from its own stream, so a
    /// tensor's values do not depend on which other tensors exist.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for spec in layout(config) {
            let t = match spec.init {
                Init::Uniform { fan_in } => {
                    let mut rng = seeded(derive_seed(seed, &[name_hash(&spec.name)]));
                    Tensor::uniform(spec.shape.clone(), 1.0 / (fan_in as f64).sqrt(), &mut rng)
                }
                Init::Constant(v) => Tensor::full(spec.shape.clone(), v),
            };
            tensors.insert(spec.name, t);
        }
        Ok(ModelParams {
            config: config.clone(),
            tensors,
        })
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    /// Checks names and shapes against the config's layout.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = layout(&self.config);
        if specs.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    /// Records every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    pub fn round_to_f32(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), t.round_to_f32()))
                .collect(),
        }
    }
}

/// Parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn linear(&self, prefix: &str) -> Result<LinearVars> {
        Ok(LinearVars {
            weight: self.var(&format!("{prefix}.weight"))?,
            bias: self.var(&format!("{prefix}.bias"))?,
        })
    }

    pub fn attention(&self, prefix: &str) -> Result<AttentionVars> {
        Ok(AttentionVars {
            query: self.linear(&format!("{prefix}.query"))?,
            key: self.linear(&format!("{prefix}.key"))?,
            value: self.linear(&format!("{prefix}.value"))?,
            output: self.linear(&format!("{prefix}.output"))?,
        })
    }

    pub fn norm(&self, prefix: &str) -> Result<(Var, Var)> {
        Ok((self.var(&format!("{prefix}.weight"))?, self.var(&format!("{prefix}.bias"))?))
    }
}
