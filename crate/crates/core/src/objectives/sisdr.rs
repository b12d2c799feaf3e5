use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

/// Bound applied to SI-SDR values inside losses.
pub const SI_SDR_CLAMP: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            op: "si_sdr",
            lhs: vec![est.len()],
            rhs: vec![reference.len()],
        });
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(())
}

/// Optimal scale, projection energy and residual energy of `est` against `reference`.
fn decompose(est: &[f64], reference: &[f64]) -> (f64, f64, f64) {
    let q = dot(reference, reference);
    let alpha = dot(est, reference) / q;
    let target = alpha * alpha * q;
    let residual: f64 = est
        .iter()
        .zip(reference)
        .map(|(x, s)| (alpha * s - x).powi(2))
        .sum();
    (alpha, target, residual)
}

/// Scale-invariant SDR in dB, unclamped.
///
/// A perfect match gives `+inf`; an estimate with no component along the
/// reference (including all zeros) gives `-inf`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(est, reference)?;
    let (_, target, residual) = decompose(est, reference);
    Ok(if residual == 0.0 {
        if target == 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    } else if target == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (target / residual).log10()
    })
}

/// SI-SDR limited to `±SI_SDR_CLAMP`, as used by the losses.
pub fn si_sdr_clamped(est: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(si_sdr(est, reference)?.clamp(-SI_SDR_CLAMP, SI_SDR_CLAMP))
}

/// Improvement of `est` over the unprocessed `mixture`, both scored against `reference`.
pub fn si_sdri(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(mixture, reference)?)
}

/// Gradient of the clamped SI-SDR with respect to the estimate.
fn si_sdr_grad(est: &[f64], reference: &[f64]) -> Vec<f64> {
    let (alpha, target, residual) = decompose(est, reference);
    let value = 10.0 * (target / residual).log10();
    if !value.is_finite() || value.abs() >= SI_SDR_CLAMP {
        return vec![0.0; est.len()];
    }
    let q = dot(reference, reference);
    let p = alpha * q;
    let k = 10.0 / LN_10;
    est.iter()
        .zip(reference)
        .map(|(x, s)| k * (2.0 * s / p + 2.0 * (alpha * s - x) / residual))
        .collect()
}

/// Clamped SI-SDR of selected (estimate row, target row) pairs.
struct SiSdrPairs {
    targets: Tensor,
    pairs: Vec<(usize, usize)>,
}

impl CustomOp for SiSdrPairs {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Vec<f64>>> {
        let est = inputs[0];
        let mut g = vec![0.0; est.numel()];
        let t = est.shape()[1];
        for (&(o, r), &up) in self.pairs.iter().zip(grad) {
            if up == 0.0 {
                continue;
            }
            let local = si_sdr_grad(est.row(o), self.targets.row(r));
            for (acc, v) in g[o * t..(o + 1) * t].iter_mut().zip(local) {
                *acc += up * v;
            }
        }
        vec![Some(g)]
    }
}

impl Tape {
    /// Clamped SI-SDR for each `(output, target)` row pair of `est: [R, T]`
    /// against the constant `targets: [S, T]`; returns a `[pairs]` vector.
    pub fn si_sdr_pairs(&mut self, est: Var, targets: &Tensor, pairs: &[(usize, usize)]) -> Result<Var> {
        let es = self.shape(est).to_vec();
        let ts = targets.shape();
        if es.len() != 2 || ts.len() != 2 || es[1] != ts[1] {
            return Err(Error::DimensionMismatch {
                op: "si_sdr_pairs",
                lhs: es,
                rhs: ts.to_vec(),
            });
        }
        if pairs.is_empty() || pairs.iter().any(|&(o, r)| o >= es[0] || r >= ts[0]) {
            return Err(Error::shape("si_sdr_pairs", "pair index out of range"));
        }
        let values = {
            let e = self.value(est);
            pairs
                .iter()
                .map(|&(o, r)| si_sdr_clamped(e.row(o), targets.row(r)))
                .collect::<Result<Vec<_>>>()?
        };
        let out = Tensor::new(vec![pairs.len()], values)?;
        let op = SiSdrPairs {
            targets: targets.clone(),
            pairs: pairs.to_vec(),
        };
        Ok(self.custom(&[est], out, Box::new(op)))
    }
}
