use serde::{Deserialize, Serialize};

use super::sisdr::si_sdr_clamped;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Largest region count for which PIT enumerates every permutation.
pub const PIT_GUARD: usize = 8;

/// Work done by one loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalStats {
    /// SI-SDR evaluations between one output and one target.
    pub si_sdr_evals: usize,
    /// Permutations whose summed score was compared.
    pub permutation_sums: usize,
}

/// Result of a loss: negated mean SI-SDR and the assignment behind it.
///
/// `perm[o]` is the target index scored against output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutcome {
    pub loss: f64,
    pub perm: Vec<usize>,
    pub stats: EvalStats,
}

/// Steps `p` to its lexicographic successor; false after the last one.
pub fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn check_shapes(op: &'static str, est: &[usize], tgt: &[usize]) -> Result<()> {
    if est.len() != 2 || est != tgt {
        return Err(Error::DimensionMismatch {
            op,
            lhs: est.to_vec(),
            rhs: tgt.to_vec(),
        });
    }
    Ok(())
}

/// `R x R` matrix of clamped SI-SDR: entry `[o][t]` scores output `o` against target `t`.
pub fn pairwise_si_sdr(est: &Tensor, tgt: &Tensor) -> Result<Vec<Vec<f64>>> {
    check_shapes("pairwise_si_sdr", est.shape(), tgt.shape())?;
    est.rows()
        .map(|e| tgt.rows().map(|t| si_sdr_clamped(e, t)).collect())
        .collect()
}

/// Exhaustive search for the assignment maximizing the summed score.
/// Ties keep the lexicographically smallest permutation.
pub fn best_permutation(scores: &[Vec<f64>]) -> Result<(Vec<usize>, f64, usize)> {
    let r = scores.len();
    if r > PIT_GUARD {
        return Err(Error::TooManyPermutations {
            regions: r,
            limit: PIT_GUARD,
        });
    }
    let mut perm: Vec<usize> = (0..r).collect();
    let mut best = (perm.clone(), f64::NEG_INFINITY);
    let mut sums = 0;
    loop {
        let total: f64 = perm.iter().enumerate().map(|(o, &t)| scores[o][t]).sum();
        sums += 1;
        if total > best.1 {
            best = (perm.clone(), total);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((best.0, best.1, sums))
}

/// Minimum over all output-to-target assignments of the negated mean SI-SDR.
pub fn pit_loss(est: &Tensor, tgt: &Tensor) -> Result<LossOutcome> {
    let scores = pairwise_si_sdr(est, tgt)?;
    let r = scores.len();
    let (perm, total, sums) = best_permutation(&scores)?;
    Ok(LossOutcome {
        loss: -total / r as f64,
        perm,
        stats: EvalStats {
            si_sdr_evals: r * r,
            permutation_sums: sums,
        },
    })
}

/// Negated mean SI-SDR with output `r` always scored against target `r`.
pub fn fixed_mapping_loss(est: &Tensor, tgt: &Tensor) -> Result<LossOutcome> {
    check_shapes("fixed_mapping_loss", est.shape(), tgt.shape())?;
    let r = est.shape()[0];
    let mut total = 0.0;
    for i in 0..r {
        total += si_sdr_clamped(est.row(i), tgt.row(i))?;
    }
    Ok(LossOutcome {
        loss: -total / r as f64,
        perm: (0..r).collect(),
        stats: EvalStats {
            si_sdr_evals: r,
            permutation_sums: 0,
        },
    })
}

/// Training objective selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pit,
    Fixed,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pit" => Ok(Regime::Pit),
            "fixed" => Ok(Regime::Fixed),
            other => Err(Error::Config(format!("unknown regime {other:?}; expected pit or fixed"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Pit => "pit",
            Regime::Fixed => "fixed",
        })
    }
}

impl Tape {
    /// Records the loss for `regime` on estimates `est: [R, T]`; returns the
    /// scalar loss node and the outcome (perm and evaluation counts).
    ///
    /// All-zero target rows mark regions without a talker. They take no part
    /// in the loss: the mean runs over active targets only, and under PIT they
    /// still occupy a slot of the permutation.
    pub fn separation_loss(&mut self, est: Var, tgt: &Tensor, regime: Regime) -> Result<(Var, LossOutcome)> {
        check_shapes("separation_loss", self.shape(est), tgt.shape())?;
        let r = tgt.shape()[0];
        let active: Vec<usize> = (0..r).filter(|&t| tgt.row(t).iter().any(|&v| v != 0.0)).collect();
        if active.is_empty() {
            return Err(Error::ZeroReference);
        }
        let n = active.len() as f64;
        let (picked, outcome) = match regime {
            Regime::Fixed => {
                let pairs: Vec<_> = active.iter().map(|&i| (i, i)).collect();
                let diag = self.si_sdr_pairs(est, tgt, &pairs)?;
                let total: f64 = self.value(diag).data().iter().sum();
                let outcome = LossOutcome {
                    loss: -total / n,
                    perm: (0..r).collect(),
                    stats: EvalStats {
                        si_sdr_evals: pairs.len(),
                        permutation_sums: 0,
                    },
                };
                (diag, outcome)
            }
            Regime::Pit => {
                let a = active.len();
                let pairs: Vec<_> = (0..r).flat_map(|o| active.iter().map(move |&t| (o, t))).collect();
                let all = self.si_sdr_pairs(est, tgt, &pairs)?;
                let values = self.value(all).data();
                let mut scores = vec![vec![0.0; r]; r];
                for o in 0..r {
                    for (k, &t) in active.iter().enumerate() {
                        scores[o][t] = values[o * a + k];
                    }
                }
                let (perm, total, sums) = best_permutation(&scores)?;
                let idx: Vec<usize> = perm
                    .iter()
                    .enumerate()
                    .filter_map(|(o, t)| active.iter().position(|x| x == t).map(|k| o * a + k))
                    .collect();
                let picked = self.gather(all, &idx)?;
                let outcome = LossOutcome {
                    loss: -total / n,
                    perm,
                    stats: EvalStats {
                        si_sdr_evals: pairs.len(),
                        permutation_sums: sums,
                    },
                };
                (picked, outcome)
            }
        };
        let mean = self.mean(picked);
        Ok((self.scale(mean, -1.0), outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signals() -> Tensor {
        Tensor::from_rows(&[
            vec![1.0, 0.2, -0.3, 0.5, 0.0, 0.1],
            vec![0.0, 1.0, 0.4, -0.2, 0.3, -0.6],
            vec![0.2, -0.1, 1.0, 0.3, -0.7, 0.2],
        ])
        .unwrap()
    }

    #[test]
    fn lexicographic_enumeration() {
        let mut p = vec![0, 1, 2];
        let mut seen = vec![p.clone()];
        while next_permutation(&mut p) {
            seen.push(p.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
    }

    #[test]
    fn identity_and_swap() {
        let t = signals();
        let id = pit_loss(&t, &t).unwrap();
        assert_eq!(id.perm, vec![0, 1, 2]);
        assert_eq!(id.loss, -SI_CLAMP);
        let swapped = Tensor::from_rows(&[t.row(1).to_vec(), t.row(0).to_vec(), t.row(2).to_vec()]).unwrap();
        let sw = pit_loss(&swapped, &t).unwrap();
        assert_eq!(sw.perm, vec![1, 0, 2]);
        assert_eq!(sw.loss, id.loss);
    }

    const SI_CLAMP: f64 = super::super::SI_SDR_CLAMP;

    #[test]
    fn call_counts() {
        let t = signals();
        let pit = pit_loss(&t, &t).unwrap();
        assert_eq!(pit.stats, EvalStats { si_sdr_evals: 9, permutation_sums: 6 });
        let fixed = fixed_mapping_loss(&t, &t).unwrap();
        assert_eq!(fixed.stats, EvalStats { si_sdr_evals: 3, permutation_sums: 0 });
    }

    #[test]
    fn ties_pick_smallest_permutation() {
        let flat = vec![vec![1.0; 3]; 3];
        assert_eq!(best_permutation(&flat).unwrap().0, vec![0, 1, 2]);
    }

    #[test]
    fn guard() {
        let big = vec![vec![0.0; 9]; 9];
        assert!(matches!(best_permutation(&big), Err(Error::TooManyPermutations { .. })));
    }

    #[test]
    fn tape_loss_matches_plain() {
        let t = signals();
        let est = Tensor::from_rows(&[
            t.row(2).iter().map(|v| v + 0.05).collect(),
            t.row(0).iter().map(|v| v * 0.9 - 0.02).collect(),
            t.row(1).to_vec(),
        ])
        .unwrap();
        for regime in [Regime::Pit, Regime::Fixed] {
            let mut tape = Tape::new();
            let e = tape.leaf(est.clone());
            let (loss, out) = tape.separation_loss(e, &t, regime).unwrap();
            let plain = match regime {
                Regime::Pit => pit_loss(&est, &t).unwrap(),
                Regime::Fixed => fixed_mapping_loss(&est, &t).unwrap(),
            };
            assert!((tape.value(loss).data()[0] - plain.loss).abs() < 1e-12);
            assert_eq!(out, plain);
        }
    }

    #[test]
    fn silent_targets_are_skipped() {
        let full = signals();
        let mut rows: Vec<Vec<f64>> = full.rows().map(<[f64]>::to_vec).collect();
        rows[1] = vec![0.0; 6];
        let t = Tensor::from_rows(&rows).unwrap();
        // Output 0 carries target 2 and output 2 carries target 0.
        let est = Tensor::from_rows(&[full.row(2).to_vec(), full.row(1).to_vec(), full.row(0).to_vec()]).unwrap();

        let mut tape = Tape::new();
        let e = tape.leaf(est.clone());
        let (loss, out) = tape.separation_loss(e, &t, Regime::Pit).unwrap();
        assert_eq!(out.perm, vec![2, 1, 0]);
        assert_eq!(out.stats.si_sdr_evals, 6);
        assert!((tape.value(loss).data()[0] + super::super::SI_SDR_CLAMP).abs() < 1e-9);
        let g = tape.backward(loss).unwrap();
        assert!(g.get_or_zeros(e, &[3, 6]).row(1).iter().all(|&v| v == 0.0));

        let mut tape = Tape::new();
        let e = tape.leaf(est);
        let (loss, out) = tape.separation_loss(e, &t, Regime::Fixed).unwrap();
        assert_eq!(out.stats.si_sdr_evals, 2);
        let expect = -(si_sdr_clamped(full.row(2), full.row(0)).unwrap() + si_sdr_clamped(full.row(0), full.row(2)).unwrap()) / 2.0;
        assert!((tape.value(loss).data()[0] - expect).abs() < 1e-12);

        let mut tape = Tape::new();
        let e = tape.leaf(Tensor::ones([3, 6]));
        assert!(matches!(
            tape.separation_loss(e, &Tensor::zeros([3, 6]), Regime::Pit),
            Err(Error::ZeroReference)
        ));
    }
}
