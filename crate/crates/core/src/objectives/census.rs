use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pit::best_permutation;
use super::pit::pairwise_si_sdr;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tally of best output permutations over a set of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    /// Region labels in canonical target order.
    pub labels: Vec<String>,
    pub total: usize,
    /// Modal permutation; `majority[o]` is the target index of output `o`.
    pub majority: Vec<usize>,
    /// Histogram keyed by the permutation rendered as labels, e.g. `D-C-B`.
    pub counts: BTreeMap<String, usize>,
    /// Examples whose permutation equals the majority.
    pub correct: usize,
    /// Single swaps of two outputs relative to the majority, keyed `X<->Y`
    /// with labels in canonical order. Every label pair is present.
    pub confusions: BTreeMap<String, usize>,
    /// Deviations from the majority that are not a single swap.
    pub other: usize,
    /// Every example matched the majority on at least one output.
    pub all_have_one_correct: bool,
}

pub fn perm_label(perm: &[usize], labels: &[String]) -> String {
    perm.iter().map(|&t| labels[t].as_str()).collect::<Vec<_>>().join("-")
}

pub fn swap_label(a: usize, b: usize, labels: &[String]) -> String {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    format!("{}<->{}", labels[lo], labels[hi])
}

impl PermutationReport {
    /// Census from already-solved permutations.
    pub fn from_permutations(perms: &[Vec<usize>], labels: &[String]) -> Result<Self> {
        let r = labels.len();
        if perms.is_empty() {
            return Err(Error::Config("permutation census needs at least one example".into()));
        }
        if let Some(p) = perms.iter().find(|p| {
            let mut s = p.to_vec();
            s.sort_unstable();
            s != (0..r).collect::<Vec<_>>()
        }) {
            return Err(Error::shape("permutation_census", format!("{p:?} is not a permutation of {r}")));
        }
        let mut by_perm: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for p in perms {
            *by_perm.entry(p.clone()).or_default() += 1;
        }
        // BTreeMap iterates in lexicographic order, so strict `>` keeps the
        // smallest permutation among equally frequent ones.
        let mut majority = (Vec::new(), 0usize);
        for (p, &c) in &by_perm {
            if c > majority.1 {
                majority = (p.clone(), c);
            }
        }
        let majority = majority.0;

        let mut confusions = BTreeMap::new();
        for a in 0..r {
            for b in a + 1..r {
                confusions.insert(swap_label(a, b, labels), 0);
            }
        }
        let (mut correct, mut other, mut all_one) = (0, 0, true);
        for p in perms {
            let differing: Vec<usize> = (0..r).filter(|&o| p[o] != majority[o]).collect();
            if differing.len() == r {
                all_one = false;
            }
            match differing.as_slice() {
                [] => correct += 1,
                &[i, j] => {
                    *confusions
                        .get_mut(&swap_label(majority[i], majority[j], labels))
                        .expect("all pairs present") += 1;
                }
                _ => other += 1,
            }
        }
        Ok(PermutationReport {
            labels: labels.to_vec(),
            total: perms.len(),
            counts: by_perm
                .iter()
                .map(|(p, &c)| (perm_label(p, labels), c))
                .collect(),
            majority,
            correct,
            confusions,
            other,
            all_have_one_correct: all_one,
        })
    }

    /// Census over `(estimates, targets)` pairs, each `[R, T]`.
    pub fn from_examples(examples: &[(Tensor, Tensor)], labels: &[String]) -> Result<Self> {
        let perms = examples
            .iter()
            .map(|(est, tgt)| Ok(best_permutation(&pairwise_si_sdr(est, tgt)?)?.0))
            .collect::<Result<Vec<_>>>()?;
        Self::from_permutations(&perms, labels)
    }

    pub fn majority_label(&self) -> String {
        perm_label(&self.majority, &self.labels)
    }

    pub fn is_identity_majority(&self) -> bool {
        self.majority.iter().enumerate().all(|(o, &t)| o == t)
    }

    /// Fraction of examples matching the majority.
    pub fn consistency(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Two-column table: majority, correct, one row per swap, then
    /// `other` and `all_have_one_correct`.
    pub fn to_table_csv(&self) -> String {
        let mut out = String::from("row,value\n");
        out.push_str(&format!("majority,{}\n", self.majority_label()));
        out.push_str(&format!("correct,{}\n", self.correct));
        // Listed in canonical order of the later label first, as in C<->B, D<->B, D<->C.
        let mut keys: Vec<_> = self.confusions.keys().cloned().collect();
        keys.sort_by_key(|k| {
            let pos = |l: &str| self.labels.iter().position(|x| x == l).unwrap_or(usize::MAX);
            let (a, b) = k.split_once("<->").unwrap_or((k, k));
            (std::cmp::Reverse(pos(b)), std::cmp::Reverse(pos(a)))
        });
        for k in keys {
            out.push_str(&format!("{k},{}\n", self.confusions[&k]));
        }
        out.push_str(&format!("other,{}\n", self.other));
        out.push_str(&format!("all_have_one_correct,{}\n", self.all_have_one_correct));
        out
    }
}
