//! Teacher-to-student distillation.
//!
//! Items are split into `K` popularity groups of near-equal popularity mass.
//! For each user the frozen teacher ranks the unobserved items inside every
//! group; positive/negative pairs are drawn only within a group, with the
//! positive chosen by `p_k ∝ exp(-k/μ)` over its 1-based rank. Because both
//! items of a pair share a popularity level, popularity offsets in the
//! teacher's scores cancel out of the pairwise comparison.
//!
//! With `K = 1` the same machinery is the global rank-aware pairwise scheme
//! used as the `cd` baseline. The `rd` baseline is a position-weighted
//! pointwise loss on the teacher's global top items.

mod loss;
mod partition;
mod plan;

pub use loss::{
    combined_objective, group_distill_loss_and_grad, pair_mean_distill_loss_and_grad,
    rd_loss_and_grad, DistillBatch, ObjectiveValue,
};
pub use partition::{partition_items, PopularityPartition};
pub use plan::{
    build_plan, cd_baseline_plan, rank_sampling_weights, sample_group_pairs, teacher_group_ranking,
    DistillMode, DistillPlan, Distiller, EpochTerms, GroupCandidates, PairNormalization,
    RankSampler, UserPairs, UserTargets,
};
