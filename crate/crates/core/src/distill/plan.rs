use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::partition::{partition_items, PopularityPartition};
use crate::backbone::EmbeddingModel;
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Teacher-ranked unobserved items of one popularity group for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCandidates {
    pub group: usize,
    /// Best first; position `k` has rank `k + 1`.
    pub items: Vec<u32>,
    pub scores: Vec<f32>,
}

/// Ranks the items of every group by teacher score (descending, ties by
/// index), drops known items, and keeps the first `per_group` of each.
/// Groups with no unobserved items are omitted.
pub fn teacher_group_ranking(
    scores: &[f32],
    partition: &PopularityPartition,
    is_known: impl Fn(u32) -> bool,
    per_group: usize,
) -> Vec<GroupCandidates> {
    let mut out = Vec::with_capacity(partition.k());
    let mut buf: Vec<(f32, u32)> = Vec::new();
    for (g, items) in partition.groups.iter().enumerate() {
        buf.clear();
        buf.extend(
            items
                .iter()
                .filter(|&&i| !is_known(i))
                .map(|&i| (scores[i as usize], i)),
        );
        if buf.is_empty() {
            continue;
        }
        let cmp = |a: &(f32, u32), b: &(f32, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        let keep = per_group.min(buf.len());
        if keep < buf.len() {
            buf.select_nth_unstable_by(keep, cmp);
            buf.truncate(keep);
        }
        buf.sort_unstable_by(cmp);
        out.push(GroupCandidates {
            group: g,
            items: buf.iter().map(|&(_, i)| i).collect(),
            scores: buf.iter().map(|&(s, _)| s).collect(),
        });
    }
    out
}

/// `p_k = exp(-k/μ) / Σ_j exp(-j/μ)` for ranks `k = 1..=len`.
pub fn rank_sampling_weights(len: usize, mu: f64) -> Vec<f64> {
    assert!(
        len >= 1 && mu > 0.0,
        "rank weights need len >= 1 and mu > 0"
    );
    // Shifting every exponent by 1/μ leaves the normalized weights unchanged.
    let raw: Vec<f64> = (0..len).map(|k| (-(k as f64) / mu).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Inverse-CDF sampler over rank positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSampler {
    weights: Vec<f64>,
    cdf: Vec<f64>,
}

impl RankSampler {
    pub fn new(len: usize, mu: f64) -> Self {
        let weights = rank_sampling_weights(len, mu);
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        RankSampler { weights, cdf }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// 0-based rank position.
    pub fn sample(&self, rng: &mut rng::Rng) -> usize {
        let x = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf
            .partition_point(|&c| c <= x)
            .min(self.cdf.len() - 1)
    }
}

/// Draws `count` pairs from one ranked candidate list.
///
/// The positive follows `sampler` (redrawn if it lands on the last rank); the
/// negative is uniform over strictly lower-ranked candidates. Lists shorter
/// than two yield nothing.
pub fn sample_group_pairs(
    candidates: &[u32],
    sampler: &RankSampler,
    count: usize,
    rng: &mut rng::Rng,
) -> Vec<(u32, u32)> {
    let len = candidates.len();
    if len < 2 {
        return Vec::new();
    }
    assert_eq!(
        sampler.len(),
        len,
        "sampler length must match candidate list"
    );
    (0..count)
        .map(|_| {
            let pos = loop {
                let p = sampler.sample(rng);
                if p + 1 < len {
                    break p;
                }
            };
            let neg = rng.random_range(pos + 1..len);
            (candidates[pos], candidates[neg])
        })
        .collect()
}

/// Per-user, per-group teacher candidate lists plus sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillPlan {
    pub k: usize,
    /// Soft-label budget per user.
    pub soft_labels: usize,
    /// `⌈soft_labels / K⌉`.
    pub per_group: usize,
    pub mu: f64,
    pub pairs_per_group: usize,
    pub users: Vec<Vec<GroupCandidates>>,
}

/// Materializes the frozen teacher's group rankings for every user.
///
/// Candidates exclude each user's training and validation items. With
/// `pairs_per_group = None` one pair is drawn per candidate slot.
pub fn build_plan(
    teacher: &EmbeddingModel,
    dataset: &InteractionDataset,
    partition: &PopularityPartition,
    soft_labels: usize,
    mu: f64,
    pairs_per_group: Option<usize>,
) -> Result<DistillPlan> {
    let k = partition.k();
    if soft_labels < k {
        return Err(Error::InvalidArgument(format!(
            "soft-label budget {soft_labels} smaller than K = {k}"
        )));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mu must be positive, got {mu}"
        )));
    }
    if teacher.num_users() != dataset.num_users || teacher.num_items() != dataset.num_items {
        return Err(Error::DimensionMismatch(
            "teacher shape differs from dataset".into(),
        ));
    }
    if partition.item_group.len() != dataset.num_items {
        return Err(Error::DimensionMismatch(
            "partition covers a different item set".into(),
        ));
    }
    let emb = teacher.scoring()?;
    let per_group = soft_labels.div_ceil(k);
    let users = (0..dataset.num_users)
        .into_par_iter()
        .map_init(
            || vec![0.0f32; dataset.num_items],
            |scores, u| {
                emb.scores_into(u, scores);
                teacher_group_ranking(scores, partition, |i| dataset.is_known(u, i), per_group)
            },
        )
        .collect();
    Ok(DistillPlan {
        k,
        soft_labels,
        per_group,
        mu,
        pairs_per_group: pairs_per_group.unwrap_or(per_group),
        users,
    })
}

/// The global (single-group) plan: every user's candidate list is the
/// teacher's top `soft_labels` unobserved items.
pub fn cd_baseline_plan(
    teacher: &EmbeddingModel,
    dataset: &InteractionDataset,
    soft_labels: usize,
    mu: f64,
    pairs_per_group: Option<usize>,
) -> Result<DistillPlan> {
    let partition = partition_items(&dataset.popularity, 1)?;
    build_plan(
        teacher,
        dataset,
        &partition,
        soft_labels,
        mu,
        pairs_per_group,
    )
}

impl DistillPlan {
    /// One delimited row per (user, group, rank): `user\tgroup\trank\titem\tscore`.
    pub fn dump(&self) -> String {
        let mut s = String::from("user\tgroup\trank\titem\tteacher_score\n");
        for (u, groups) in self.users.iter().enumerate() {
            for g in groups {
                for (r, (i, sc)) in g.items.iter().zip(&g.scores).enumerate() {
                    let _ = writeln!(s, "{u}\t{}\t{}\t{i}\t{sc:.6}", g.group, r + 1);
                }
            }
        }
        s
    }

    fn samplers(&self) -> Vec<RankSampler> {
        let longest = self
            .users
            .iter()
            .flatten()
            .map(|g| g.items.len())
            .max()
            .unwrap_or(0);
        (0..=longest)
            .map(|len| RankSampler::new(len.max(1), self.mu))
            .collect()
    }

    /// Samples `S_ug` for every group of `user` from the `(seed, epoch, user)`
    /// stream.
    pub fn sample_user_pairs(
        &self,
        user: usize,
        seed: u64,
        epoch: u64,
        samplers: &[RankSampler],
    ) -> Vec<(u32, u32)> {
        let mut rng = rng::stream(seed, Purpose::Pairs, epoch, user as u64);
        let mut pairs = Vec::new();
        for g in &self.users[user] {
            let len = g.items.len();
            if len >= 2 {
                pairs.extend(sample_group_pairs(
                    &g.items,
                    &samplers[len],
                    self.pairs_per_group,
                    &mut rng,
                ));
            }
        }
        pairs
    }
}

/// Sampled distillation pairs of one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserPairs {
    pub user: u32,
    pub pairs: Vec<(u32, u32)>,
}

/// Pointwise distillation targets of one user (best first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTargets {
    pub user: u32,
    pub items: Vec<u32>,
}

/// How the pairwise distillation loss of a batch is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairNormalization {
    /// Divide by the number of user entries in the batch.
    #[default]
    PerUser,
    /// Divide by the number of pairs in the batch.
    PerPair,
}

impl PairNormalization {
    pub fn name(self) -> &'static str {
        match self {
            PairNormalization::PerUser => "user",
            PairNormalization::PerPair => "pair",
        }
    }
}

impl std::str::FromStr for PairNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "user" => Ok(PairNormalization::PerUser),
            "pair" => Ok(PairNormalization::PerPair),
            other => Err(Error::Config(format!(
                "unknown distillation normalization {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillMode {
    /// Within-group rank-aware pairs (`unkd`, and `cd` as `K = 1`).
    Pairwise,
    /// Position-weighted pointwise loss on the top items (`rd`).
    Pointwise,
}

/// Distillation terms for one epoch, one entry per user that has any.
#[derive(Debug, Clone, PartialEq)]
pub enum EpochTerms {
    Pairs(Vec<UserPairs>),
    Pointwise(Vec<UserTargets>),
}

impl EpochTerms {
    pub fn len(&self) -> usize {
        match self {
            EpochTerms::Pairs(v) => v.len(),
            EpochTerms::Pointwise(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shuffle(&mut self, rng: &mut rng::Rng) {
        match self {
            EpochTerms::Pairs(v) => v.shuffle(rng),
            EpochTerms::Pointwise(v) => v.shuffle(rng),
        }
    }
}

/// A plan bound to a loss mode and weight, producing per-epoch terms.
#[derive(Debug, Clone)]
pub struct Distiller {
    pub plan: DistillPlan,
    pub mode: DistillMode,
    pub lambda: f64,
    pub seed: u64,
    /// Reuse the epoch-0 pairs every epoch instead of resampling.
    pub freeze_pairs: bool,
    /// Averaging of the pairwise loss; per user unless changed.
    pub normalization: PairNormalization,
    samplers: Vec<RankSampler>,
}

impl Distiller {
    pub fn new(
        plan: DistillPlan,
        mode: DistillMode,
        lambda: f64,
        seed: u64,
        freeze_pairs: bool,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let samplers = plan.samplers();
        Ok(Distiller {
            plan,
            mode,
            lambda,
            seed,
            freeze_pairs,
            normalization: PairNormalization::PerUser,
            samplers,
        })
    }

    pub fn epoch_terms(&self, epoch: usize) -> EpochTerms {
        let epoch = if self.freeze_pairs { 0 } else { epoch as u64 };
        match self.mode {
            DistillMode::Pairwise => EpochTerms::Pairs(
                (0..self.plan.users.len())
                    .into_par_iter()
                    .map(|u| UserPairs {
                        user: u as u32,
                        pairs: self
                            .plan
                            .sample_user_pairs(u, self.seed, epoch, &self.samplers),
                    })
                    .filter(|p| !p.pairs.is_empty())
                    .collect(),
            ),
            DistillMode::Pointwise => EpochTerms::Pointwise(
                self.plan
                    .users
                    .iter()
                    .enumerate()
                    .filter_map(|(u, groups)| {
                        let items: Vec<u32> = groups
                            .iter()
                            .flat_map(|g| g.items.iter().copied())
                            .collect();
                        (!items.is_empty()).then_some(UserTargets {
                            user: u as u32,
                            items,
                        })
                    })
                    .collect(),
            ),
        }
    }
}
