//! Triple-path transformer separator with region-ordered outputs.

mod checkpoint;
mod config;
mod model;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use config::ModelConfig;
pub use model::{attention_probe, encode, forward, separate, Forward, SeparationOutput};
pub use params::{count_params, layout, BoundParams, Init, ModelParams, ParamSpec, PATHS};
