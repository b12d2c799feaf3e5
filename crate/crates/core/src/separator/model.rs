use super::config::ModelConfig;
use super::params::{BoundParams, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[R, T]`, in canonical region order.
    pub estimates: Var,
    /// `[R, N, F]`, nonnegative.
    pub masks: Var,
    /// `[M, N, F]` encoder output.
    pub encoded: Var,
    /// Per block: inter-channel attention weights `[Q, K, H, M, M]`.
    pub inter_channel_attention: Vec<Var>,
    pub frames: usize,
}

/// Materialized outputs of [`separate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationOutput {
    pub estimates: Tensor,
    pub masks: Tensor,
}

/// Post-norm transformer encoder layer over the second-to-last axis.
fn transformer_layer(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var, heads: usize) -> Result<(Var, Var)> {
    let attn = p.attention(&format!("{prefix}.attn"))?;
    let (a, weights) = tape.multi_head_attention(x, x, x, &attn, heads)?;
    let r = tape.add(x, a)?;
    let (g1, b1) = p.norm(&format!("{prefix}.norm1"))?;
    let x1 = tape.layer_norm(r, g1, b1)?;
    let h = tape.linear(x1, &p.linear(&format!("{prefix}.ff1"))?)?;
    let h = tape.relu(h);
    let h = tape.linear(h, &p.linear(&format!("{prefix}.ff2"))?)?;
    let r = tape.add(x1, h)?;
    let (g2, b2) = p.norm(&format!("{prefix}.norm2"))?;
    Ok((tape.layer_norm(r, g2, b2)?, weights))
}

/// Shared encoder: `[M, T]` -> ReLU features `[M, N, F]`.
pub fn encode(tape: &mut Tape, p: &BoundParams, config: &ModelConfig, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let [m, t] = shape[..] else {
        return Err(Error::shape("encode", format!("input must be [M,T], got {shape:?}")));
    };
    let y3 = tape.reshape(y, &[m, 1, t])?;
    let enc = tape.conv1d(y3, p.var("encoder.weight")?, config.hop)?;
    let enc = tape.relu(enc);
    tape.permute(enc, &[0, 2, 1])
}

/// Records the full separator on `tape` for mixture `y: [M, T]`.
pub fn forward(tape: &mut Tape, p: &BoundParams, config: &ModelConfig, y: Var) -> Result<Forward> {
    let shape = tape.shape(y).to_vec();
    if shape.len() != 2 || shape[0] != config.num_mics {
        return Err(Error::DimensionMismatch {
            op: "separator",
            lhs: shape,
            rhs: vec![config.num_mics, 0],
        });
    }
    let samples = shape[1];
    let (h, r_count, f) = (config.heads, config.num_regions, config.features);

    let encoded = encode(tape, p, config, y)?;
    let frames = tape.shape(encoded)[1];

    let (g, b) = p.norm("input_norm")?;
    let x = tape.layer_norm(encoded, g, b)?;
    let x = tape.linear(x, &p.linear("input_linear")?)?;
    let mut x = tape.chunk(x, config.chunk)?; // [M, Q, K, F]
    let q = tape.shape(x)[1];

    let mut inter_channel_attention = Vec::with_capacity(config.num_blocks);
    for blk in 0..config.num_blocks {
        let xc = tape.permute(x, &[1, 2, 0, 3])?; // [Q, K, M, F]
        let (xc, w) = transformer_layer(tape, p, &format!("blocks.{blk}.inter_channel"), xc, h)?;
        inter_channel_attention.push(w);
        x = tape.permute(xc, &[2, 0, 1, 3])?;

        let (xi, _) = transformer_layer(tape, p, &format!("blocks.{blk}.intra_chunk"), x, h)?;

        let xq = tape.permute(xi, &[0, 2, 1, 3])?; // [M, K, Q, F]
        let (xq, _) = transformer_layer(tape, p, &format!("blocks.{blk}.inter_chunk"), xq, h)?;
        x = tape.permute(xq, &[0, 2, 1, 3])?;
    }

    let x = tape.prelu(x, p.var("prelu.slope")?)?;
    // One F -> R·F map shared by all channels, then averaged over channels.
    let x = tape.linear(x, &p.linear("flatten")?)?; // [M, Q, K, R·F]
    let x = tape.mean_axis0(x)?;
    let x = tape.reshape(x, &[q, config.chunk, r_count, f])?;
    let x = tape.permute(x, &[2, 0, 1, 3])?; // [R, Q, K, F]
    let x = tape.overlap_add(x, frames)?; // [R, N, F]

    let a = tape.linear(x, &p.linear("gate_tanh")?)?;
    let a = tape.tanh(a);
    let s = tape.linear(x, &p.linear("gate_sigmoid")?)?;
    let s = tape.sigmoid(s);
    let gated = tape.mul(a, s)?;
    let masks = tape.linear(gated, &p.linear("mask")?)?;
    let masks = tape.relu(masks);

    let reference = tape.select(encoded, config.reference())?; // [N, F]
    let masked = tape.mul(masks, reference)?;
    let masked = tape.permute(masked, &[0, 2, 1])?; // [R, F, N]
    let decoded = tape.conv1d_transpose(masked, p.var("decoder.weight")?, config.hop)?; // [R, 1, T']
    let len = tape.shape(decoded)[2];
    let decoded = tape.reshape(decoded, &[r_count, len])?;
    let estimates = tape.pad_last(decoded, samples)?;

    Ok(Forward {
        estimates,
        masks,
        encoded,
        inter_channel_attention,
        frames,
    })
}

/// Inference without gradients.
pub fn separate(params: &ModelParams, y: &Tensor) -> Result<SeparationOutput> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let yv = tape.constant(y.clone());
    let out = forward(&mut tape, &p, &params.config, yv)?;
    Ok(SeparationOutput {
        estimates: tape.value(out.estimates).clone(),
        masks: tape.value(out.masks).clone(),
    })
}

/// Inter-channel attention of block `block`, averaged over every chunk
/// position that maps to a real (unpadded) frame: `[H, M, M]`.
pub fn attention_probe(params: &ModelParams, y: &Tensor, block: usize) -> Result<Tensor> {
    let config = &params.config;
    if block >= config.num_blocks {
        return Err(Error::Config(format!(
            "block {block} out of range for {} blocks",
            config.num_blocks
        )));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let yv = tape.constant(y.clone());
    let out = forward(&mut tape, &p, config, yv)?;
    let w = tape.value(out.inter_channel_attention[block]);
    let [q, k, h, m, _] = w.shape()[..] else {
        return Err(Error::shape("attention_probe", "unexpected weight shape"));
    };
    let hop = config.chunk / 2;
    let grid = h * m * m;
    let mut acc = vec![0.0; grid];
    let mut count = 0usize;
    for qi in 0..q {
        for ki in 0..k {
            if qi * hop + ki >= out.frames {
                continue;
            }
            let base = (qi * k + ki) * grid;
            for (a, v) in acc.iter_mut().zip(&w.data()[base..base + grid]) {
                *a += v;
            }
            count += 1;
        }
    }
    acc.iter_mut().for_each(|v| *v /= count as f64);
    Tensor::new(vec![h, m, m], acc)
}
