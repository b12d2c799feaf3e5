use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Affine map `x W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

/// Query/key/value/output projections of one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub query: LinearVars,
    pub key: LinearVars,
    pub value: LinearVars,
    pub output: LinearVars,
}

impl Tape {
    pub fn linear(&mut self, x: Var, lin: &LinearVars) -> Result<Var> {
        let y = self.matmul(x, lin.weight)?;
        self.add(y, lin.bias)
    }

    /// Scaled dot-product attention over the second-to-last axis.
    ///
    /// Inputs are `[.., L, F]` (keys/values may have their own length). Returns
    /// the projected output `[.., Lq, F]` and the attention weights
    /// `[.., heads, Lq, Lk]`, whose rows sum to one.
    pub fn multi_head_attention(
        &mut self,
        x_q: Var,
        x_k: Var,
        x_v: Var,
        proj: &AttentionVars,
        heads: usize,
    ) -> Result<(Var, Var)> {
        let q_shape = self.shape(x_q).to_vec();
        let k_shape = self.shape(x_k).to_vec();
        let r = q_shape.len();
        if r < 2 || k_shape.len() != r || self.shape(x_v) != k_shape.as_slice() {
            return Err(Error::DimensionMismatch {
                op: "multi_head_attention",
                lhs: q_shape,
                rhs: k_shape,
            });
        }
        let feat = q_shape[r - 1];
        if heads == 0 || feat % heads != 0 {
            return Err(Error::Config(format!(
                "feature size {feat} is not divisible by {heads} heads"
            )));
        }
        let head_dim = feat / heads;
        let lead = &q_shape[..r - 2];
        if k_shape[..r - 2] != *lead || k_shape[r - 1] != feat {
            return Err(Error::DimensionMismatch {
                op: "multi_head_attention",
                lhs: q_shape,
                rhs: k_shape,
            });
        }
        let batch: usize = lead.iter().product();
        let (lq, lk) = (q_shape[r - 2], k_shape[r - 2]);

        let q = self.linear(x_q, &proj.query)?;
        let k = self.linear(x_k, &proj.key)?;
        let v = self.linear(x_v, &proj.value)?;

        let q = self.reshape(q, &[batch, lq, heads, head_dim])?;
        let q = self.permute(q, &[0, 2, 1, 3])?;
        let k = self.reshape(k, &[batch, lk, heads, head_dim])?;
        let kt = self.permute(k, &[0, 2, 3, 1])?;
        let v = self.reshape(v, &[batch, lk, heads, head_dim])?;
        let v = self.permute(v, &[0, 2, 1, 3])?;

        let scores = self.matmul(q, kt)?;
        let scores = self.scale(scores, 1.0 / (head_dim as f64).sqrt());
        let weights = self.softmax(scores);
        let ctx = self.matmul(weights, v)?;
        let ctx = self.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.reshape(ctx, &q_shape)?;
        let out = self.linear(ctx, &proj.output)?;

        let mut w_shape = lead.to_vec();
        w_shape.extend([heads, lq, lk]);
        let weights = self.reshape(weights, &w_shape)?;
        Ok((out, weights))
    }
}
