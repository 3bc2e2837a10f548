//! Top-N ranking metrics, popularity-group breakdowns, and the
//! popularity-share audit.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::backbone::{top_n_by_score, EmbeddingModel, Embeddings};
use crate::dataset::{InteractionDataset, Split};
use crate::distill::PopularityPartition;
use crate::error::{Error, Result};

fn hits(top: &[u32], relevant: &[u32], n: usize, keep: impl Fn(u32) -> bool) -> usize {
    top.iter()
        .take(n)
        .filter(|&&i| keep(i) && relevant.binary_search(&i).is_ok())
        .count()
}

/// `|top_N ∩ relevant| / |relevant|`; `None` when `relevant` is empty.
/// `relevant` must be sorted.
pub fn recall_at_n(top: &[u32], relevant: &[u32], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(hits(top, relevant, n, |_| true) as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with the ideal DCG truncated at
/// `min(|relevant|, N)`; `None` when `relevant` is empty.
pub fn ndcg_at_n(top: &[u32], relevant: &[u32], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = top
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(k, _)| 1.0 / ((k + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(n))
        .map(|k| 1.0 / ((k + 2) as f64).log2())
        .sum();
    Some(dcg / idcg)
}

/// Recall restricted to the relevant items inside a group; `None` when the
/// user has no relevant item in the group.
pub fn group_recall(
    top: &[u32],
    relevant: &[u32],
    in_group: impl Fn(u32) -> bool,
    n: usize,
) -> Option<f64> {
    let denom = relevant.iter().filter(|&&i| in_group(i)).count();
    if denom == 0 {
        return None;
    }
    Some(hits(top, relevant, n, &in_group) as f64 / denom as f64)
}

/// Fraction of all recommended slots (first `n` of each list) held by group
/// members. Zero when there are no slots.
pub fn popularity_share(lists: &[Vec<u32>], in_group: impl Fn(u32) -> bool, n: usize) -> f64 {
    let mut slots = 0usize;
    let mut members = 0usize;
    for list in lists {
        for &i in list.iter().take(n) {
            slots += 1;
            members += in_group(i) as usize;
        }
    }
    if slots == 0 {
        0.0
    } else {
        members as f64 / slots as f64
    }
}

/// Share of test interactions that fall in the group: the reference ratio a
/// popularity-neutral recommender would reproduce.
pub fn ideal_share(test: &[Vec<u32>], in_group: impl Fn(u32) -> bool) -> f64 {
    let total: usize = test.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let members: usize = test.iter().flatten().filter(|&&i| in_group(i)).count();
    members as f64 / total as f64
}

/// Items hidden from the ranking for each user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    Train,
    TrainAndValid,
}

/// Top-`n` list for every user (empty lists for users with nothing to rank).
pub fn rank_users(
    emb: &Embeddings<f32>,
    dataset: &InteractionDataset,
    exclude: Exclusion,
    n: usize,
) -> Vec<Vec<u32>> {
    (0..dataset.num_users)
        .into_par_iter()
        .map_init(
            || vec![0.0f32; dataset.num_items],
            |scores, u| {
                emb.scores_into(u, scores);
                match exclude {
                    Exclusion::Train => top_n_by_score(scores, n, |i| dataset.in_train(u, i)),
                    Exclusion::TrainAndValid => {
                        top_n_by_score(scores, n, |i| dataset.is_known(u, i))
                    }
                }
            },
        )
        .collect()
}

/// Mean validation NDCG@n over users with a nonempty validation split,
/// ranking everything outside the training split.
pub fn validation_ndcg(
    model: &EmbeddingModel,
    dataset: &InteractionDataset,
    n: usize,
) -> Result<f64> {
    let emb = model.scoring()?;
    let lists = rank_users(emb, dataset, Exclusion::Train, n);
    let vals: Vec<f64> = lists
        .iter()
        .zip(dataset.split(Split::Valid))
        .filter_map(|(top, rel)| ndcg_at_n(top, rel, n))
        .collect();
    if vals.is_empty() {
        return Err(Error::Empty("no user has validation items".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Test-set metrics of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub users: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Recall per evaluation group, popular first.
    pub group_recall: Vec<f64>,
    /// Users with at least one relevant test item in each group.
    pub group_users: Vec<usize>,
    /// Share of top-N slots per group.
    pub share: Vec<f64>,
    /// Share of test interactions per group.
    pub ideal_share: Vec<f64>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> (f64, usize) {
    let (sum, count) = v.flatten().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (if count == 0 { 0.0 } else { sum / count as f64 }, count)
}

/// Evaluates on the test split: candidates are all items outside each user's
/// train and validation sets; metrics are averaged over qualifying users
/// with equal weight.
pub fn evaluate_lists(
    lists: &[Vec<u32>],
    dataset: &InteractionDataset,
    partition: &PopularityPartition,
    n: usize,
) -> Result<EvalReport> {
    if partition.k() != 2 {
        return Err(Error::InvalidArgument(format!(
            "evaluation expects a popular/unpopular partition, got K = {}",
            partition.k()
        )));
    }
    let test = dataset.split(Split::Test);
    let (recall, users) = mean(lists.iter().zip(test).map(|(t, r)| recall_at_n(t, r, n)));
    let (ndcg, _) = mean(lists.iter().zip(test).map(|(t, r)| ndcg_at_n(t, r, n)));
    let mut recalls = Vec::new();
    let mut group_users = Vec::new();
    let mut share = Vec::new();
    let mut ideal = Vec::new();
    for g in 0..2 {
        let in_g = |i: u32| partition.group_of(i) == g;
        let (r, c) = mean(
            lists
                .iter()
                .zip(test)
                .map(|(t, rel)| group_recall(t, rel, in_g, n)),
        );
        recalls.push(r);
        group_users.push(c);
        share.push(popularity_share(lists, in_g, n));
        ideal.push(ideal_share(test, in_g));
    }
    Ok(EvalReport {
        n,
        users,
        recall,
        ndcg,
        group_recall: recalls,
        group_users,
        share,
        ideal_share: ideal,
    })
}

pub fn evaluate_model(
    model: &EmbeddingModel,
    dataset: &InteractionDataset,
    partition: &PopularityPartition,
    n: usize,
) -> Result<EvalReport> {
    let lists = rank_users(model.scoring()?, dataset, Exclusion::TrainAndValid, n);
    evaluate_lists(&lists, dataset, partition, n)
}

/// Identifies the rows of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportLabels {
    pub dataset: String,
    pub backbone: String,
    pub method: String,
    pub seed: u64,
}

pub const REPORT_HEADER: &str = "dataset,backbone,method,metric,group,N,value,seed";

const GROUPS: [&str; 2] = ["popular", "unpopular"];

impl EvalReport {
    /// `(metric, group, value)` triples in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, f64)> {
        let mut e = vec![
            ("recall", "overall", self.recall),
            ("ndcg", "overall", self.ndcg),
            ("users", "overall", self.users as f64),
        ];
        for g in 0..2 {
            e.push(("recall", GROUPS[g], self.group_recall[g]));
            e.push(("users", GROUPS[g], self.group_users[g] as f64));
            e.push(("share", GROUPS[g], self.share[g]));
            e.push(("ideal_share", GROUPS[g], self.ideal_share[g]));
        }
        e
    }

    /// CSV rows without the header.
    pub fn csv_rows(&self, labels: &ReportLabels) -> String {
        let mut s = String::new();
        for (metric, group, value) in self.entries() {
            let _ = writeln!(
                s,
                "{},{},{},{metric},{group},{},{value:.8},{}",
                labels.dataset, labels.backbone, labels.method, self.n, labels.seed
            );
        }
        s
    }

    pub fn to_csv(&self, labels: &ReportLabels) -> String {
        format!("{REPORT_HEADER}\n{}", self.csv_rows(labels))
    }

    pub fn value(&self, metric: &str, group: &str) -> Option<f64> {
        self.entries()
            .into_iter()
            .find(|(m, g, _)| *m == metric && *g == group)
            .map(|(_, _, v)| v)
    }
}
