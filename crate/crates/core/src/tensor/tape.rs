use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    /// Gradient with respect to each input, in input order. `None` means the
    /// input does not receive a gradient from this op.
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Prelu(usize, usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d(usize, usize, ConvGeom),
    // Geometry is that of the adjoint forward convolution.
    ConvTranspose1d(usize, usize, ConvGeom),
    Chunk {
        x: usize,
        batch: usize,
        frames: usize,
        feat: usize,
        size: usize,
    },
    OverlapAdd {
        x: usize,
        batch: usize,
        size: usize,
        feat: usize,
        frames: usize,
    },
    Select(usize, usize),
    MeanAxis0(usize),
    Gather(usize, Vec<usize>),
    Sum(usize),
    PadLast {
        x: usize,
        in_len: usize,
        out_len: usize,
    },
    Custom(Vec<usize>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, so every node's parents precede it
/// and a single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of the given shape when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Sums a full-size gradient down to a trailing-suffix broadcast operand.
fn reduce_to_suffix(g: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for chunk in g.chunks(len) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            _ => parents.iter().any(|&p| self.nodes[p].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input: gradients are collected for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if is_suffix(sa, sb) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn broadcast_zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = tb.numel();
        let data = ta
            .data()
            .chunks(n)
            .flat_map(|c| c.iter().zip(tb.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("broadcast preserves shape")
    }

    /// Elementwise sum; `b` may be a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("add", a, b)?;
        let out = self.broadcast_zip(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("sub", a, b)?;
        let out = self.broadcast_zip(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("mul", a, b)?;
        let out = self.broadcast_zip(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a.0, factor), &[a.0])
    }

    /// `[..,i,k] x [..,k,j]`; a rank-2 right operand is shared across the
    /// batch dimensions of the left one.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::DimensionMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (i, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, j) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch: usize = batch_a.iter().product();
        let mut out = vec![0.0; batch * i * j];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            if sb.len() == 2 {
                kernels::gemm(da, db, &mut out, batch * i, k, j);
            } else {
                if sb[..sb.len() - 2] != *batch_a {
                    return Err(mismatch());
                }
                for bi in 0..batch {
                    kernels::gemm(
                        &da[bi * i * k..(bi + 1) * i * k],
                        &db[bi * k * j..(bi + 1) * k * j],
                        &mut out[bi * i * j..(bi + 1) * i * j],
                        i,
                        k,
                        j,
                    );
                }
            }
        }
        let mut shape = batch_a.to_vec();
        shape.extend([i, j]);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= seen.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::shape(
                "permute",
                format!("axes {axes:?} are not a permutation for shape {shape:?}"),
            ));
        }
        let (data, out_shape) = kernels::permute(self.value(a).data(), shape, axes);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Permute(a.0, axes.to_vec()), &[a.0]))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a.0), &[a.0]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a.0), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a.0), &[a.0])
    }

    /// Parametric ReLU with a single learned slope (`slope` has one element).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).numel() != 1 {
            return Err(Error::shape("prelu", "slope must hold a single value"));
        }
        let s = self.value(slope).data()[0];
        let out = self.value(x).map(|v| if v > 0.0 { v } else { s * v });
        Ok(self.push(out, Op::Prelu(x.0, slope.0), &[x.0, slope.0]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let width = *t.shape().last().expect("non-empty shape");
        let data = kernels::softmax_rows(t.data(), width);
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Softmax(a.0), &[a.0])
    }

    /// Normalizes over the last axis, then applies the learned affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let feat = *self.shape(x).last().expect("non-empty shape");
        if self.value(gamma).numel() != feat || self.value(beta).numel() != feat {
            return Err(Error::DimensionMismatch {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let (out, xhat, inv_std) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            feat,
        );
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    /// Valid strided cross-correlation. `x` is `[C,T]` or `[B,C,T]`,
    /// `kernels` is `[F,C,W]`; the result is `[F,N]` or `[B,F,N]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be at least 1".into()));
        }
        let (batch, c_in, len) = match xs[..] {
            [c, t] => (1, c, t),
            [b, c, t] => (b, c, t),
            _ => return Err(Error::shape("conv1d", format!("input must be [C,T] or [B,C,T], got {xs:?}"))),
        };
        if ks.len() != 3 || ks[1] != c_in {
            return Err(Error::DimensionMismatch {
                op: "conv1d",
                lhs: xs,
                rhs: ks,
            });
        }
        let (f_out, window) = (ks[0], ks[2]);
        let frames = kernels::conv_output_len(len, window, stride).ok_or(Error::InputTooShort {
            len,
            needed: window,
        })?;
        let geom = ConvGeom {
            batch,
            in_channels: c_in,
            out_channels: f_out,
            len,
            window,
            stride,
            frames,
        };
        let data = kernels::conv1d(self.value(x).data(), self.value(kernels).data(), geom);
        let shape = if xs.len() == 2 {
            vec![f_out, frames]
        } else {
            vec![batch, f_out, frames]
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Conv1d(x.0, kernels.0, geom), &[x.0, kernels.0]))
    }

    /// Overlap-added synthesis, the adjoint of [`Tape::conv1d`] with the same
    /// kernels. `x` is `[F,N]` or `[B,F,N]`, `kernels` is `[F,C,W]`; the result
    /// is `[C,T]` or `[B,C,T]` with `T = (N-1)*stride + W`.
    pub fn conv1d_transpose(&mut self, x: Var, kernels: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        if stride == 0 {
            return Err(Error::Config("conv1d_transpose stride must be at least 1".into()));
        }
        let (batch, f_in, frames) = match xs[..] {
            [f, n] => (1, f, n),
            [b, f, n] => (b, f, n),
            _ => {
                return Err(Error::shape(
                    "conv1d_transpose",
                    format!("input must be [F,N] or [B,F,N], got {xs:?}"),
                ))
            }
        };
        if ks.len() != 3 || ks[0] != f_in {
            return Err(Error::DimensionMismatch {
                op: "conv1d_transpose",
                lhs: xs,
                rhs: ks,
            });
        }
        let (c_out, window) = (ks[1], ks[2]);
        let len = kernels::conv_transpose_output_len(frames, window, stride);
        let geom = ConvGeom {
            batch,
            in_channels: c_out,
            out_channels: f_in,
            len,
            window,
            stride,
            frames,
        };
        let data = kernels::conv1d_adjoint_input(self.value(x).data(), self.value(kernels).data(), geom);
        let shape = if xs.len() == 2 {
            vec![c_out, len]
        } else {
            vec![batch, c_out, len]
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::ConvTranspose1d(x.0, kernels.0, geom), &[x.0, kernels.0]))
    }

    /// Segments the frame axis (second to last) into 50%-overlapped chunks:
    /// `[..,N,F]` -> `[..,Q,K,F]`, zero-padding the tail.
    pub fn chunk(&mut self, x: Var, size: usize) -> Result<Var> {
        if size == 0 || size % 2 != 0 {
            return Err(Error::Config(format!("chunk size must be positive and even, got {size}")));
        }
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("chunk", format!("need [..,N,F], got {shape:?}")));
        }
        let r = shape.len();
        let (frames, feat) = (shape[r - 2], shape[r - 1]);
        let batch: usize = shape[..r - 2].iter().product();
        let q = kernels::chunk_count(frames, size);
        let data = kernels::chunk(self.value(x).data(), batch, frames, feat, size);
        let mut out_shape = shape[..r - 2].to_vec();
        out_shape.extend([q, size, feat]);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            out,
            Op::Chunk {
                x: x.0,
                batch,
                frames,
                feat,
                size,
            },
            &[x.0],
        ))
    }

    /// Inverse of [`Tape::chunk`]: `[..,Q,K,F]` -> `[..,N,F]`.
    pub fn overlap_add(&mut self, x: Var, frames: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(Error::shape("overlap_add", format!("need [..,Q,K,F], got {shape:?}")));
        }
        let r = shape.len();
        let (chunks, size, feat) = (shape[r - 3], shape[r - 2], shape[r - 1]);
        if size % 2 != 0 || kernels::chunk_count(frames, size) != chunks {
            return Err(Error::shape(
                "overlap_add",
                format!("{chunks} chunks of size {size} do not tile {frames} frames"),
            ));
        }
        let batch: usize = shape[..r - 3].iter().product();
        let data = kernels::overlap_add(self.value(x).data(), batch, chunks, size, feat, frames);
        let mut out_shape = shape[..r - 3].to_vec();
        out_shape.extend([frames, feat]);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            out,
            Op::OverlapAdd {
                x: x.0,
                batch,
                size,
                feat,
                frames,
            },
            &[x.0],
        ))
    }

    /// Slice `index` of the leading axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || index >= shape[0] {
            return Err(Error::shape(
                "select",
                format!("index {index} out of range for {shape:?}"),
            ));
        }
        let out = Tensor::new(shape[1..].to_vec(), self.value(x).row(index).to_vec())?;
        Ok(self.push(out, Op::Select(x.0, index), &[x.0]))
    }

    /// Mean over the leading axis.
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("mean_axis0", format!("need rank >= 2, got {shape:?}")));
        }
        let n = shape[0] as f64;
        let mut data = reduce_to_suffix(self.value(x).data(), self.value(x).numel() / shape[0]);
        data.iter_mut().for_each(|v| *v /= n);
        let out = Tensor::new(shape[1..].to_vec(), data)?;
        Ok(self.push(out, Op::MeanAxis0(x.0), &[x.0]))
    }

    /// Picks flat elements of `x` into a rank-1 tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if indices.is_empty() || indices.iter().any(|&i| i >= src.len()) {
            return Err(Error::shape("gather", "index out of range or empty"));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(vec![indices.len()], data)?;
        Ok(self.push(out, Op::Gather(x.0, indices.to_vec()), &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Zero-pads or trims the last axis to `len`.
    pub fn pad_last(&mut self, x: Var, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let in_len = *shape.last().expect("non-empty shape");
        if len == 0 {
            return Err(Error::shape("pad_last", "target length must be positive"));
        }
        let keep = in_len.min(len);
        let mut data = Vec::with_capacity(self.value(x).numel() / in_len * len);
        for row in self.value(x).data().chunks(in_len) {
            data.extend_from_slice(&row[..keep]);
            data.extend(std::iter::repeat_n(0.0, len - keep));
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            out,
            Op::PadLast {
                x: x.0,
                in_len,
                out_len: len,
            },
            &[x.0],
        ))
    }

    /// Records an externally defined operation whose forward value was
    /// already computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        self.push(output, Op::Custom(ids.clone(), op), &ids)
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be a scalar, got {:?}", self.shape(output)),
            ));
        }
        self.backward_with(output, vec![1.0])
    }

    /// Reverse sweep seeded with an arbitrary output gradient.
    pub fn backward_with(&self, output: Var, seed: Vec<f64>) -> Result<Gradients> {
        if seed.len() != self.value(output).numel() {
            return Err(Error::shape("backward", "seed size does not match output"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|g| Tensor::new(self.nodes[id].value.shape().to_vec(), g).expect("gradient matches value shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: usize| self.nodes[id].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    accumulate(&mut grads[*a], g.to_vec());
                }
                if self.wants(*b) {
                    let mut gb = reduce_to_suffix(g, val(*b).len());
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = vb.len();
                if self.wants(*a) {
                    let ga = g
                        .chunks(n)
                        .flat_map(|c| c.iter().zip(vb).map(|(x, y)| x * y))
                        .collect();
                    accumulate(&mut grads[*a], ga);
                }
                if self.wants(*b) {
                    let prod: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[*b], reduce_to_suffix(&prod, n));
                }
            }
            Op::Scale(a, f) => {
                accumulate(&mut grads[*a], g.iter().map(|v| v * f).collect());
            }
            Op::MatMul(a, b) => {
                let sa = self.nodes[*a].value.shape();
                let sb = self.nodes[*b].value.shape();
                let (i, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let j = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                let (va, vb) = (val(*a), val(*b));
                if self.wants(*a) {
                    let mut ga = vec![0.0; va.len()];
                    if sb.len() == 2 {
                        kernels::gemm_nt(g, vb, &mut ga, batch * i, k, j);
                    } else {
                        for bi in 0..batch {
                            kernels::gemm_nt(
                                &g[bi * i * j..(bi + 1) * i * j],
                                &vb[bi * k * j..(bi + 1) * k * j],
                                &mut ga[bi * i * k..(bi + 1) * i * k],
                                i,
                                k,
                                j,
                            );
                        }
                    }
                    accumulate(&mut grads[*a], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; vb.len()];
                    if sb.len() == 2 {
                        kernels::gemm_tn(va, g, &mut gb, batch * i, k, j);
                    } else {
                        for bi in 0..batch {
                            kernels::gemm_tn(
                                &va[bi * i * k..(bi + 1) * i * k],
                                &g[bi * i * j..(bi + 1) * i * j],
                                &mut gb[bi * k * j..(bi + 1) * k * j],
                                i,
                                k,
                                j,
                            );
                        }
                    }
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Permute(a, axes) => {
                let inv = kernels::inverse_axes(axes);
                let (ga, _) = kernels::permute(g, node.value.shape(), &inv);
                accumulate(&mut grads[*a], ga);
            }
            Op::Reshape(a) => accumulate(&mut grads[*a], g.to_vec()),
            Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Sigmoid(a) => {
                let ga = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Tanh(a) => {
                let ga = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
            Op::Prelu(x, slope) => {
                let vx = val(*x);
                let s = val(*slope)[0];
                if self.wants(*x) {
                    let gx = g
                        .iter()
                        .zip(vx)
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { s * gv })
                        .collect();
                    accumulate(&mut grads[*x], gx);
                }
                if self.wants(*slope) {
                    let gs: f64 = g
                        .iter()
                        .zip(vx)
                        .filter(|(_, xv)| **xv <= 0.0)
                        .map(|(gv, xv)| gv * xv)
                        .sum();
                    accumulate(&mut grads[*slope], vec![gs]);
                }
            }
            Op::Softmax(a) => {
                let width = *node.value.shape().last().unwrap();
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), out) in g
                    .chunks(width)
                    .zip(node.value.data().chunks(width))
                    .zip(ga.chunks_mut(width))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), y) in out.iter_mut().zip(gr).zip(yr) {
                        *o = y * (gv - dot);
                    }
                }
                accumulate(&mut grads[*a], ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let feat = val(*gamma).len();
                let gam = val(*gamma);
                if self.wants(*gamma) {
                    let prod: Vec<f64> = g.iter().zip(xhat).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads[*gamma], reduce_to_suffix(&prod, feat));
                }
                if self.wants(*beta) {
                    accumulate(&mut grads[*beta], reduce_to_suffix(g, feat));
                }
                if self.wants(*x) {
                    let mut gx = vec![0.0; g.len()];
                    let nf = feat as f64;
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * feat..(r + 1) * feat];
                        let hr = &xhat[r * feat..(r + 1) * feat];
                        let dh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / nf;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / nf;
                        for jj in 0..feat {
                            gx[r * feat + jj] = is * (dh[jj] - mean_dh - hr[jj] * mean_dh_h);
                        }
                    }
                    accumulate(&mut grads[*x], gx);
                }
            }
            Op::Conv1d(x, k, geom) => {
                if self.wants(*x) {
                    accumulate(&mut grads[*x], kernels::conv1d_adjoint_input(g, val(*k), *geom));
                }
                if self.wants(*k) {
                    accumulate(&mut grads[*k], kernels::conv1d_kernel_grad(val(*x), g, *geom));
                }
            }
            Op::ConvTranspose1d(x, k, geom) => {
                if self.wants(*x) {
                    accumulate(&mut grads[*x], kernels::conv1d(g, val(*k), *geom));
                }
                if self.wants(*k) {
                    accumulate(&mut grads[*k], kernels::conv1d_kernel_grad(g, val(*x), *geom));
                }
            }
            Op::Chunk {
                x,
                batch,
                frames,
                feat,
                size,
            } => {
                let q = kernels::chunk_count(*frames, *size);
                let gx = kernels::overlap_add(g, *batch, q, *size, *feat, *frames);
                accumulate(&mut grads[*x], gx);
            }
            Op::OverlapAdd {
                x,
                batch,
                size,
                feat,
                frames,
            } => {
                let gx = kernels::chunk(g, *batch, *frames, *feat, *size);
                accumulate(&mut grads[*x], gx);
            }
            Op::Select(x, index) => {
                let mut gx = vec![0.0; val(*x).len()];
                let n = g.len();
                gx[index * n..(index + 1) * n].copy_from_slice(g);
                accumulate(&mut grads[*x], gx);
            }
            Op::MeanAxis0(x) => {
                let rows = self.nodes[*x].value.shape()[0];
                let inv = 1.0 / rows as f64;
                let gx = (0..rows).flat_map(|_| g.iter().map(|v| v * inv)).collect();
                accumulate(&mut grads[*x], gx);
            }
            Op::Gather(x, indices) => {
                let mut gx = vec![0.0; val(*x).len()];
                for (&i, gv) in indices.iter().zip(g) {
                    gx[i] += gv;
                }
                accumulate(&mut grads[*x], gx);
            }
            Op::Sum(x) => {
                accumulate(&mut grads[*x], vec![g[0]; val(*x).len()]);
            }
            Op::PadLast { x, in_len, out_len } => {
                let keep = (*in_len).min(*out_len);
                let mut gx = Vec::with_capacity(val(*x).len());
                for row in g.chunks(*out_len) {
                    gx.extend_from_slice(&row[..keep]);
                    gx.extend(std::iter::repeat_n(0.0, in_len - keep));
                }
                accumulate(&mut grads[*x], gx);
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
                let outs = op.backward(g, &ins, &node.value);
                for (&i, gi) in inputs.iter().zip(outs) {
                    if let Some(gi) = gi {
                        if self.wants(i) {
                            accumulate(&mut grads[i], gi);
                        }
                    }
                }
            }
        }
    }
}
