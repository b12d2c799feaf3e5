// Raw slice kernels behind the tape operations. Shapes are validated by the
// callers in tape.rs; everything here assumes consistent sizes.

/// Frames produced by a valid (unpadded) strided convolution.
pub fn conv_output_len(len: usize, window: usize, stride: usize) -> Option<usize> {
    if len < window || stride == 0 {
        None
    } else {
        Some((len - window) / stride + 1)
    }
}

/// Samples produced by overlap-added synthesis of `frames` windows.
pub fn conv_transpose_output_len(frames: usize, window: usize, stride: usize) -> usize {
    (frames - 1) * stride + window
}

/// Number of 50%-overlapped chunks of size `chunk` covering `frames` frames.
pub fn chunk_count(frames: usize, chunk: usize) -> usize {
    let hop = chunk / 2;
    frames.saturating_sub(chunk).div_ceil(hop) + 1
}

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
pub(crate) fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let s: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += s;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub len: usize,
    pub window: usize,
    pub stride: usize,
    pub frames: usize,
}

/// x `[B,C,T]`, k `[F,C,W]` -> `[B,F,N]`
pub(crate) fn conv1d(x: &[f64], k: &[f64], g: ConvGeom) -> Vec<f64> {
    let ConvGeom {
        batch,
        in_channels: c_in,
        out_channels: f_out,
        len,
        window,
        stride,
        frames,
    } = g;
    let mut out = vec![0.0; batch * f_out * frames];
    for b in 0..batch {
        for f in 0..f_out {
            let o = &mut out[(b * f_out + f) * frames..(b * f_out + f + 1) * frames];
            for c in 0..c_in {
                let xs = &x[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                let ks = &k[(f * c_in + c) * window..(f * c_in + c + 1) * window];
                for (n, on) in o.iter_mut().enumerate() {
                    let seg = &xs[n * stride..n * stride + window];
                    *on += seg.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv1d`] with respect to its input: `[B,F,N]` -> `[B,C,T]`.
pub(crate) fn conv1d_adjoint_input(grad: &[f64], k: &[f64], g: ConvGeom) -> Vec<f64> {
    let ConvGeom {
        batch,
        in_channels: c_in,
        out_channels: f_out,
        len,
        window,
        stride,
        frames,
    } = g;
    let mut out = vec![0.0; batch * c_in * len];
    for b in 0..batch {
        for c in 0..c_in {
            let xs = &mut out[(b * c_in + c) * len..(b * c_in + c + 1) * len];
            for f in 0..f_out {
                let gs = &grad[(b * f_out + f) * frames..(b * f_out + f + 1) * frames];
                let ks = &k[(f * c_in + c) * window..(f * c_in + c + 1) * window];
                for (n, &gv) in gs.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    for (xv, kv) in xs[n * stride..n * stride + window].iter_mut().zip(ks) {
                        *xv += gv * kv;
                    }
                }
            }
        }
    }
    out
}

/// Kernel gradient of [`conv1d`]: correlates the input `[B,C,T]` with the
/// output gradient `[B,F,N]`, giving `[F,C,W]`.
pub(crate) fn conv1d_kernel_grad(x: &[f64], grad: &[f64], g: ConvGeom) -> Vec<f64> {
    let ConvGeom {
        batch,
        in_channels: c_in,
        out_channels: f_out,
        len,
        window,
        stride,
        frames,
    } = g;
    let mut out = vec![0.0; f_out * c_in * window];
    for b in 0..batch {
        for f in 0..f_out {
            let gs = &grad[(b * f_out + f) * frames..(b * f_out + f + 1) * frames];
            for c in 0..c_in {
                let xs = &x[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                let ks = &mut out[(f * c_in + c) * window..(f * c_in + c + 1) * window];
                for (n, &gv) in gs.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    for (kv, xv) in ks.iter_mut().zip(&xs[n * stride..n * stride + window]) {
                        *kv += gv * xv;
                    }
                }
            }
        }
    }
    out
}

/// Strides of a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes so that output axis `i` is input axis `axes[i]`.
pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    if rank == 0 {
        return (data.to_vec(), out_shape);
    }
    // Innermost axis handled as a strided run.
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// `[B,N,F]` -> `[B,Q,K,F]` with hop `K/2`, zero-filled past `N`.
pub(crate) fn chunk(x: &[f64], batch: usize, frames: usize, feat: usize, size: usize) -> Vec<f64> {
    let hop = size / 2;
    let q = chunk_count(frames, size);
    let mut out = vec![0.0; batch * q * size * feat];
    for b in 0..batch {
        for qi in 0..q {
            for k in 0..size {
                let n = qi * hop + k;
                if n >= frames {
                    break;
                }
                let dst = ((b * q + qi) * size + k) * feat;
                let src = (b * frames + n) * feat;
                out[dst..dst + feat].copy_from_slice(&x[src..src + feat]);
            }
        }
    }
    out
}

/// `[B,Q,K,F]` -> `[B,N,F]`; chunks summed at hop `K/2`, trimmed to `N`.
pub(crate) fn overlap_add(
    c: &[f64],
    batch: usize,
    chunks: usize,
    size: usize,
    feat: usize,
    frames: usize,
) -> Vec<f64> {
    let hop = size / 2;
    let mut out = vec![0.0; batch * frames * feat];
    for b in 0..batch {
        for qi in 0..chunks {
            for k in 0..size {
                let n = qi * hop + k;
                if n >= frames {
                    break;
                }
                let src = ((b * chunks + qi) * size + k) * feat;
                let dst = (b * frames + n) * feat;
                for (o, v) in out[dst..dst + feat].iter_mut().zip(&c[src..src + feat]) {
                    *o += v;
                }
            }
        }
    }
    out
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes each row of width `feat`; returns (output, normalized, inverse std).
pub(crate) fn layer_norm(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    feat: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / feat;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * feat..(r + 1) * feat];
        let mean = row.iter().sum::<f64>() / feat as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / feat as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = is;
        for j in 0..feat {
            let h = (row[j] - mean) * is;
            xhat[r * feat + j] = h;
            out[r * feat + j] = h * gamma[j] + beta[j];
        }
    }
    (out, xhat, inv_std)
}

pub(crate) fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}
