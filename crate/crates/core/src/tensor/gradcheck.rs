//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it is used to check.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome for one input tensor.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-8)` over checked entries.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Norms over the checked entries: `‖analytic − numeric‖`, `‖analytic‖`, `‖numeric‖`.
    pub diff_norm: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Which flat entries of each input to perturb. `None` checks everything.
pub type Selection = Option<Vec<Vec<usize>>>;

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with the given step.
pub fn check<F>(inputs: &[Tensor], f: F, step: f64, selection: Selection) -> Result<Vec<GradReport>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        let indices: Vec<usize> = match &selection {
            Some(sel) => sel[i].clone(),
            None => (0..input.numel()).collect(),
        };
        let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
        for &j in &indices {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(1e-8);
        reports.push(GradReport {
            relative_error: diff2.sqrt() / denom,
            max_abs_error: max_abs,
            checked: indices.len(),
            diff_norm: diff2.sqrt(),
            analytic_norm: a2.sqrt(),
            numeric_norm: n2.sqrt(),
        });
    }
    Ok(reports)
}

/// Largest relative error across all inputs.
pub fn worst(reports: &[GradReport]) -> f64 {
    reports.iter().map(|r| r.relative_error).fold(0.0, f64::max)
}

/// Relative error of all checked entries taken as one vector. Unlike
/// [`worst`], inputs whose true gradient is zero (e.g. attention key biases,
/// which softmax ignores) do not dominate through round-off.
pub fn joint(reports: &[GradReport]) -> f64 {
    let sq = |f: fn(&GradReport) -> f64| reports.iter().map(|r| f(r).powi(2)).sum::<f64>().sqrt();
    let diff = sq(|r| r.diff_norm);
    diff / sq(|r| r.analytic_norm).max(sq(|r| r.numeric_norm)).max(1e-8)
}
