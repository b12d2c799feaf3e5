//! Separation metrics, training losses and the permutation census.

mod census;
mod hungarian;
mod pit;
mod sisdr;

pub use census::{perm_label, swap_label, PermutationReport};
pub use hungarian::{max_score_assignment, min_cost_assignment};
pub use pit::{
    best_permutation, fixed_mapping_loss, next_permutation, pairwise_si_sdr, pit_loss, EvalStats, LossOutcome,
    Regime, PIT_GUARD,
};
pub use sisdr::{si_sdr, si_sdr_clamped, si_sdri, SI_SDR_CLAMP};
