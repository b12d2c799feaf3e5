//! Per-op gradient cases shared by the tensor tests and the acceptance run.
#![allow(dead_code)]

use regionsep::objectives::Regime;
use regionsep::rng::{derive_seed, seeded};
use regionsep::tensor::gradcheck::check;
use regionsep::tensor::{AttentionVars, LinearVars};
use regionsep::{Result, Tape, Tensor, Var};

pub const SEEDS: u64 = 20;
pub const STEP: f64 = 1e-5;
pub const ZERO_GRAD: f64 = 1e-7;

pub type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

pub fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), 1.0, &mut seeded(seed))
}

/// Values pushed at least 0.05 away from zero, for ops with a kink there.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    rand_t(shape, seed).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Contracts any output with fixed pseudo-random weights, so every output
/// element reaches the scalar with a different coefficient.
pub fn project(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = rand_t(&shape, 0xfeed ^ shape.iter().product::<usize>() as u64);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

pub struct Case {
    pub group: &'static str,
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub kinked: bool,
    pub build: Build,
    pub tol: f64,
}

#[derive(Debug)]
pub struct Outcome {
    pub worst_relative: f64,
    /// Largest absolute error over inputs whose true gradient is zero.
    pub worst_zero_abs: f64,
}

impl Outcome {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst_relative < tol && self.worst_zero_abs < 1e-8
    }
}

pub fn mha(t: &mut Tape, v: &[Var]) -> Result<Var> {
    let lin = |i: usize| LinearVars {
        weight: v[1 + 2 * i],
        bias: v[2 + 2 * i],
    };
    let proj = AttentionVars {
        query: lin(0),
        key: lin(1),
        value: lin(2),
        output: lin(3),
    };
    let (out, _) = t.multi_head_attention(v[0], v[0], v[0], &proj, 2)?;
    Ok(out)
}

pub const MHA_SHAPES: [&[usize]; 9] = [&[2, 3, 4], &[4, 4], &[4], &[4, 4], &[4], &[4, 4], &[4], &[4, 4], &[4]];

fn loss_with(t: &mut Tape, v: &[Var], regime: Regime) -> Result<Var> {
    let tgt = rand_t(&[3, 16], 77);
    Ok(t.separation_loss(v[0], &tgt, regime)?.0)
}

pub fn op_cases() -> Vec<Case> {
    let case = |group, name, shapes: &[&[usize]], kinked, build: Build, tol| Case {
        group,
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        kinked,
        build,
        tol,
    };
    vec![
        case("elementwise", "add", &[&[3, 4], &[3, 4]], false, |t, v| t.add(v[0], v[1]), 1e-4),
        case("elementwise", "add_broadcast", &[&[2, 3, 4], &[4]], false, |t, v| t.add(v[0], v[1]), 1e-4),
        case("elementwise", "sub", &[&[2, 5], &[5]], false, |t, v| t.sub(v[0], v[1]), 1e-4),
        case("elementwise", "mul", &[&[3, 4], &[3, 4]], false, |t, v| t.mul(v[0], v[1]), 1e-4),
        case("elementwise", "mul_broadcast", &[&[2, 3, 4], &[3, 4]], false, |t, v| t.mul(v[0], v[1]), 1e-4),
        case("elementwise", "scale", &[&[6]], false, |t, v| Ok(t.scale(v[0], -2.5)), 1e-4),
        case("elementwise", "relu", &[&[4, 5]], true, |t, v| Ok(t.relu(v[0])), 1e-4),
        case("elementwise", "sigmoid", &[&[4, 5]], false, |t, v| Ok(t.sigmoid(v[0])), 1e-4),
        case("elementwise", "tanh", &[&[4, 5]], false, |t, v| Ok(t.tanh(v[0])), 1e-4),
        case("elementwise", "prelu", &[&[4, 5], &[1]], true, |t, v| t.prelu(v[0], v[1]), 1e-4),
        case("reduction", "softmax", &[&[3, 6]], false, |t, v| Ok(t.softmax(v[0])), 1e-4),
        case("reduction", "layer_norm", &[&[3, 6], &[6], &[6]], false, |t, v| t.layer_norm(v[0], v[1], v[2]), 1e-4),
        case("reduction", "sum", &[&[3, 2]], false, |t, v| Ok(t.sum(v[0])), 1e-4),
        case("reduction", "mean", &[&[3, 2]], false, |t, v| Ok(t.mean(v[0])), 1e-4),
        case("reduction", "mean_axis0", &[&[3, 2, 4]], false, |t, v| t.mean_axis0(v[0]), 1e-4),
        case("shape", "permute", &[&[2, 3, 4]], false, |t, v| t.permute(v[0], &[2, 0, 1]), 1e-4),
        case("shape", "transpose_last", &[&[2, 3, 4]], false, |t, v| t.transpose_last(v[0]), 1e-4),
        case("shape", "reshape", &[&[2, 6]], false, |t, v| t.reshape(v[0], &[3, 4]), 1e-4),
        case("shape", "select", &[&[3, 2, 2]], false, |t, v| t.select(v[0], 1), 1e-4),
        case("shape", "gather", &[&[3, 3]], false, |t, v| t.gather(v[0], &[0, 4, 8, 4]), 1e-4),
        case("shape", "pad_last_grow", &[&[2, 5]], false, |t, v| t.pad_last(v[0], 8), 1e-4),
        case("shape", "pad_last_trim", &[&[2, 5]], false, |t, v| t.pad_last(v[0], 3), 1e-4),
        case("shape", "chunk", &[&[2, 9, 3]], false, |t, v| t.chunk(v[0], 4), 1e-4),
        case("shape", "overlap_add", &[&[2, 4, 4, 3]], false, |t, v| t.overlap_add(v[0], 9), 1e-4),
        case("linalg", "matmul", &[&[3, 4], &[4, 5]], false, |t, v| t.matmul(v[0], v[1]), 1e-6),
        case("linalg", "matmul_batched", &[&[2, 3, 4], &[2, 4, 2]], false, |t, v| t.matmul(v[0], v[1]), 1e-6),
        case("linalg", "matmul_shared_rhs", &[&[2, 3, 4], &[4, 2]], false, |t, v| t.matmul(v[0], v[1]), 1e-6),
        case("linalg", "conv1d", &[&[2, 20], &[3, 2, 4]], false, |t, v| t.conv1d(v[0], v[1], 2), 1e-6),
        case("linalg", "conv1d_batched", &[&[2, 1, 17], &[3, 1, 4]], false, |t, v| t.conv1d(v[0], v[1], 3), 1e-6),
        case("linalg", "conv1d_transpose", &[&[3, 6], &[3, 2, 4]], false, |t, v| t.conv1d_transpose(v[0], v[1], 2), 1e-6),
        case(
            "layer",
            "linear",
            &[&[2, 3, 4], &[4, 5], &[5]],
            false,
            |t, v| t.linear(v[0], &LinearVars { weight: v[1], bias: v[2] }),
            1e-4,
        ),
        case("layer", "multi_head_attention", &MHA_SHAPES, false, mha, 1e-5),
        case("loss", "pit_loss", &[&[3, 16]], false, |t, v| loss_with(t, v, Regime::Pit), 1e-4),
        case("loss", "fixed_loss", &[&[3, 16]], false, |t, v| loss_with(t, v, Regime::Fixed), 1e-4),
        case(
            "network",
            "toy_net",
            &[&[5, 4], &[4, 6], &[6], &[6, 3], &[3]],
            false,
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add(h, v[2])?;
                let h = t.tanh(h);
                let y = t.matmul(h, v[3])?;
                let y = t.add(y, v[4])?;
                Ok(t.sigmoid(y))
            },
            1e-4,
        ),
    ]
}

/// Central-difference check of one case over [`SEEDS`] random inputs.
pub fn run_case(case: &Case) -> Outcome {
    let mut out = Outcome {
        worst_relative: 0.0,
        worst_zero_abs: 0.0,
    };
    for s in 0..SEEDS {
        let inputs: Vec<Tensor> = case
            .shapes
            .iter()
            .enumerate()
            .map(|(i, sh)| {
                let seed = derive_seed(s, &[i as u64, case.name.len() as u64]);
                if case.kinked {
                    away_from_zero(sh, seed)
                } else {
                    rand_t(sh, seed)
                }
            })
            .collect();
        let reports = check(
            &inputs,
            |tape, v| {
                let y = (case.build)(tape, v)?;
                project(tape, y)
            },
            STEP,
            None,
        )
        .unwrap();
        for r in &reports {
            if r.analytic_norm < ZERO_GRAD && r.numeric_norm < ZERO_GRAD {
                // Identically zero gradient: relative error is round-off over
                // round-off, so require absolute agreement instead.
                out.worst_zero_abs = out.worst_zero_abs.max(r.max_abs_error);
            } else {
                out.worst_relative = out.worst_relative.max(r.relative_error);
            }
        }
    }
    out
}
