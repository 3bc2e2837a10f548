//! Synthetic generative model of teacher soft labels.
//!
//! Labels are `Y(u,i) = M(u,i) + f(Z_i)` with true affinity `M`, item
//! popularity `Z`, and bias `f(z) = γ·ln(1+z)`. In this additive model the
//! total effect of an item relative to a baseline item `i*` splits exactly
//! into a popularity-path part and a preference-path part, and ranking by
//! `Y` inside a stratum of equal popularity coincides with ranking by the
//! preference-path effect.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Discrete power law `P(Z = z) ∝ z^-exponent` on `1..=max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub exponent: f64,
    pub max: u32,
}

impl Default for PowerLaw {
    fn default() -> Self {
        PowerLaw {
            exponent: 1.5,
            max: 1000,
        }
    }
}

impl PowerLaw {
    fn sample_all(&self, count: usize, rng: &mut rng::Rng) -> Vec<u32> {
        let mut cdf = Vec::with_capacity(self.max as usize);
        let mut acc = 0.0;
        for z in 1..=self.max {
            acc += (z as f64).powf(-self.exponent);
            cdf.push(acc);
        }
        (0..count)
            .map(|_| {
                let x = rng.random::<f64>() * acc;
                (cdf.partition_point(|&c| c <= x).min(cdf.len() - 1) + 1) as u32
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCausalModel {
    pub num_users: usize,
    pub num_items: usize,
    /// Row-major `m×n` true affinities.
    pub affinity: Vec<f64>,
    pub popularity: Vec<u32>,
    pub gamma: f64,
    pub baseline_item: usize,
    /// Row-major `m×n` soft labels.
    pub labels: Vec<f64>,
}

/// Index of the item with median popularity (lower median, ties by index).
pub fn median_popularity_item(popularity: &[u32]) -> usize {
    let mut order: Vec<usize> = (0..popularity.len()).collect();
    order.sort_by(|&a, &b| popularity[a].cmp(&popularity[b]).then(a.cmp(&b)));
    order[(order.len() - 1) / 2]
}

impl SyntheticCausalModel {
    /// Assembles the labels from given affinities and popularity.
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        affinity: Vec<f64>,
        popularity: Vec<u32>,
        gamma: f64,
        baseline_item: Option<usize>,
    ) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be >= 0, got {gamma}"
            )));
        }
        if num_users == 0
            || num_items == 0
            || affinity.len() != num_users * num_items
            || popularity.len() != num_items
        {
            return Err(Error::DimensionMismatch(
                "affinity must be m×n and popularity length n".into(),
            ));
        }
        let baseline_item = baseline_item.unwrap_or_else(|| median_popularity_item(&popularity));
        if baseline_item >= num_items {
            return Err(Error::InvalidArgument(format!(
                "baseline item {baseline_item} out of range"
            )));
        }
        let mut model = SyntheticCausalModel {
            num_users,
            num_items,
            affinity,
            popularity,
            gamma,
            baseline_item,
            labels: Vec::new(),
        };
        model.labels = (0..num_users * num_items)
            .map(|k| model.affinity[k] + model.bias(model.popularity[k % num_items]))
            .collect();
        Ok(model)
    }

    /// Affinity uniform on `[0, 1)`, popularity from `popularity_law`.
    pub fn generate(
        num_users: usize,
        num_items: usize,
        gamma: f64,
        popularity_law: PowerLaw,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::stream(seed, Purpose::Causal, 0, 0);
        let affinity = (0..num_users * num_items)
            .map(|_| rng.random::<f64>())
            .collect();
        let mut zrng = rng::stream(seed, Purpose::Causal, 0, 1);
        let popularity = popularity_law.sample_all(num_items, &mut zrng);
        Self::from_parts(num_users, num_items, affinity, popularity, gamma, None)
    }

    /// A copy with new `γ` (affinity and popularity unchanged).
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::from_parts(
            self.num_users,
            self.num_items,
            self.affinity.clone(),
            self.popularity.clone(),
            gamma,
            Some(self.baseline_item),
        )
    }

    /// A copy with new popularity (affinity and baseline index unchanged).
    pub fn with_popularity(&self, popularity: Vec<u32>) -> Result<Self> {
        Self::from_parts(
            self.num_users,
            self.num_items,
            self.affinity.clone(),
            popularity,
            self.gamma,
            Some(self.baseline_item),
        )
    }

    /// `f(z) = γ·ln(1+z)`.
    pub fn bias(&self, z: u32) -> f64 {
        self.gamma * (z as f64).ln_1p()
    }

    pub fn affinity(&self, u: usize, i: usize) -> f64 {
        self.affinity[u * self.num_items + i]
    }

    pub fn label(&self, u: usize, i: usize) -> f64 {
        self.labels[u * self.num_items + i]
    }

    /// Label under the intervention "affinity of item `i`, popularity `z`".
    pub fn counterfactual_label(&self, u: usize, i: usize, z: u32) -> f64 {
        self.affinity(u, i) + self.bias(z)
    }

    /// `TE_i = Y_i − Y_i*`.
    pub fn total_effect(&self, u: usize, i: usize) -> f64 {
        self.label(u, i) - self.label(u, self.baseline_item)
    }

    /// `PEZ_i = Y_(i*, Z_i) − Y_i*`: only the popularity changes.
    pub fn path_effect_z(&self, u: usize, i: usize) -> f64 {
        self.counterfactual_label(u, self.baseline_item, self.popularity[i])
            - self.label(u, self.baseline_item)
    }

    /// `PEM_i = TE_i − PEZ_i`.
    pub fn path_effect_m(&self, u: usize, i: usize) -> f64 {
        self.total_effect(u, i) - self.path_effect_z(u, i)
    }

    /// Items grouped by identical popularity, ascending popularity.
    pub fn equal_popularity_strata(&self) -> Vec<Vec<usize>> {
        let mut strata: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &z) in self.popularity.iter().enumerate() {
            strata.entry(z).or_default().push(i);
        }
        strata.into_values().collect()
    }
}

/// Orders compared by [`lemma1_check`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmaOutcome {
    pub holds: bool,
    pub by_label: Vec<usize>,
    pub by_preference: Vec<usize>,
}

fn argsort_desc(items: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = items.to_vec();
    v.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    v
}

/// Compares the ranking of `items` by soft label with the ranking by the
/// preference-path effect, without checking popularity.
pub fn lemma1_check_relaxed(
    model: &SyntheticCausalModel,
    u: usize,
    items: &[usize],
) -> LemmaOutcome {
    let by_label = argsort_desc(items, |i| model.label(u, i));
    let by_preference = argsort_desc(items, |i| model.path_effect_m(u, i));
    LemmaOutcome {
        holds: by_label == by_preference,
        by_label,
        by_preference,
    }
}

/// Same comparison restricted to a stratum of identical popularity.
pub fn lemma1_check(
    model: &SyntheticCausalModel,
    u: usize,
    items: &[usize],
) -> Result<LemmaOutcome> {
    if let Some(&first) = items.first() {
        let z = model.popularity[first];
        if let Some(&bad) = items.iter().find(|&&i| model.popularity[i] != z) {
            return Err(Error::UnequalPopularity(format!(
                "item {bad} has popularity {} but item {first} has {z}",
                model.popularity[bad]
            )));
        }
    }
    Ok(lemma1_check_relaxed(model, u, items))
}

/// Share of ordered item pairs whose order by label disagrees with the order
/// by affinity, averaged over users.
pub fn inversion_rate(model: &SyntheticCausalModel, items: &[usize]) -> f64 {
    let mut flipped = 0usize;
    let mut total = 0usize;
    for u in 0..model.num_users {
        for (a, &i) in items.iter().enumerate() {
            for &j in &items[a + 1..] {
                let dm = model.affinity(u, i) - model.affinity(u, j);
                let dy = model.label(u, i) - model.label(u, j);
                total += 1;
                flipped += (dm * dy < 0.0) as usize;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        flipped as f64 / total as f64
    }
}

/// Items in the top popularity decile (at least one item).
pub fn top_decile(popularity: &[u32]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..popularity.len()).collect();
    order.sort_by(|&a, &b| popularity[b].cmp(&popularity[a]).then(a.cmp(&b)));
    let cut = (popularity.len() / 10).max(1);
    let mut flag = vec![false; popularity.len()];
    for &i in &order[..cut] {
        flag[i] = true;
    }
    flag
}

/// Mean over users of the share of each top-`n`-by-label list that falls in
/// the top popularity decile.
pub fn popular_share_of_top(model: &SyntheticCausalModel, n: usize) -> f64 {
    let popular = top_decile(&model.popularity);
    let all: Vec<usize> = (0..model.num_items).collect();
    let mut sum = 0.0;
    for u in 0..model.num_users {
        let top = argsort_desc(&all, |i| model.label(u, i));
        let k = n.min(top.len());
        sum += top[..k].iter().filter(|&&i| popular[i]).count() as f64 / k as f64;
    }
    sum / model.num_users as f64
}

/// One row of the γ sweep report.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub gamma: f64,
    pub inversion_rate: f64,
    pub stratum_inversion_rate: f64,
    pub popular_share_top10: f64,
    pub strata_checked: usize,
    pub strata_passed: usize,
}

/// Runs the equal-popularity check on every (user, stratum) of `model` and
/// measures the overall bias.
pub fn gamma_row(model: &SyntheticCausalModel) -> Result<GammaRow> {
    let strata = model.equal_popularity_strata();
    let mut checked = 0;
    let mut passed = 0;
    let mut stratum_flips = 0.0;
    let mut stratum_count = 0usize;
    for stratum in &strata {
        for u in 0..model.num_users {
            checked += 1;
            passed += lemma1_check(model, u, stratum)?.holds as usize;
        }
        if stratum.len() >= 2 {
            stratum_flips += inversion_rate(model, stratum);
            stratum_count += 1;
        }
    }
    let all: Vec<usize> = (0..model.num_items).collect();
    Ok(GammaRow {
        gamma: model.gamma,
        inversion_rate: inversion_rate(model, &all),
        stratum_inversion_rate: if stratum_count == 0 {
            0.0
        } else {
            stratum_flips / stratum_count as f64
        },
        popular_share_top10: popular_share_of_top(model, 10),
        strata_checked: checked,
        strata_passed: passed,
    })
}

pub const GAMMA_REPORT_HEADER: &str =
    "gamma,inversion_rate,stratum_inversion_rate,popular_share_top10,strata_checked,strata_passed";

impl GammaRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{},{}",
            self.gamma,
            self.inversion_rate,
            self.stratum_inversion_rate,
            self.popular_share_top10,
            self.strata_checked,
            self.strata_passed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_items(z: [u32; 2], gamma: f64) -> SyntheticCausalModel {
        SyntheticCausalModel::from_parts(1, 2, vec![0.9, 0.2], z.to_vec(), gamma, Some(0)).unwrap()
    }

    #[test]
    fn no_bias_means_labels_are_affinity() {
        let m = SyntheticCausalModel::generate(5, 30, 0.0, PowerLaw::default(), 1).unwrap();
        assert_eq!(m.labels, m.affinity);
    }

    #[test]
    fn equal_popularity_preserves_order() {
        let m = two_items([10, 10], 1.0);
        // 0.9 + ln 11 and 0.2 + ln 11
        assert!((m.label(0, 0) - 3.297895).abs() < 1e-6);
        assert!((m.label(0, 1) - 2.597895).abs() < 1e-6);
        assert!(lemma1_check(&m, 0, &[0, 1]).unwrap().holds);
    }

    #[test]
    fn popularity_gap_flips_order() {
        let m = two_items([1, 100], 1.0);
        assert!((m.label(0, 0) - 1.59315).abs() < 1e-5);
        assert!((m.label(0, 1) - 4.81512).abs() < 1e-5);
        let out = lemma1_check_relaxed(&m, 0, &[0, 1]);
        assert!(!out.holds);
        assert_eq!(out.by_label, vec![1, 0]);
        assert_eq!(out.by_preference, vec![0, 1]);
        assert!(matches!(
            lemma1_check(&m, 0, &[0, 1]),
            Err(Error::UnequalPopularity(_))
        ));
    }

    #[test]
    fn effects_examples() {
        let m = SyntheticCausalModel::from_parts(1, 2, vec![0.4, 0.7], vec![100, 1], 1.0, Some(1))
            .unwrap();
        assert_eq!(m.total_effect(0, 1), 0.0);
        assert_eq!(m.path_effect_m(0, 1), 0.0);
        assert!((m.path_effect_z(0, 0) - (101f64.ln() - 2f64.ln())).abs() < 1e-12);
        assert!((m.path_effect_z(0, 0) - 3.92197).abs() < 1e-5);
        let te = m.total_effect(0, 0);
        let want = (0.4 - 0.7) + (101f64.ln() - 2f64.ln());
        assert!((te - want).abs() < 1e-12);
        let flat = m.with_gamma(0.0).unwrap();
        assert!((flat.total_effect(0, 0) - (0.4 - 0.7)).abs() < 1e-15);
        assert_eq!(flat.path_effect_z(0, 0), 0.0);
    }

    #[test]
    fn preference_effect_ignores_popularity() {
        let m = SyntheticCausalModel::generate(3, 40, 1.5, PowerLaw::default(), 8).unwrap();
        let other = SyntheticCausalModel::generate(3, 40, 1.5, PowerLaw::default(), 99).unwrap();
        let m2 = m.with_popularity(other.popularity.clone()).unwrap();
        for u in 0..3 {
            for i in 0..40 {
                let a = m.path_effect_m(u, i);
                let b = m2.path_effect_m(u, i);
                assert!((a - b).abs() < 1e-12);
                assert!((a - (m.affinity(u, i) - m.affinity(u, m.baseline_item))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_and_empty_subsets_hold() {
        let m = SyntheticCausalModel::generate(2, 10, 2.0, PowerLaw::default(), 3).unwrap();
        assert!(lemma1_check(&m, 0, &[4]).unwrap().holds);
        assert!(lemma1_check(&m, 0, &[]).unwrap().holds);
    }

    #[test]
    fn median_baseline() {
        assert_eq!(median_popularity_item(&[5, 1, 9, 3, 7]), 0);
        assert_eq!(median_popularity_item(&[5, 1, 9, 3, 7, 6]), 0);
        assert_eq!(median_popularity_item(&[8, 1, 9, 3, 7, 6]), 5);
        assert_eq!(median_popularity_item(&[2, 2, 1, 3]), 0);
    }

    #[test]
    fn gamma_row_counts() {
        let m = SyntheticCausalModel::generate(4, 50, 1.0, PowerLaw::default(), 2).unwrap();
        let row = gamma_row(&m).unwrap();
        assert_eq!(row.strata_checked, row.strata_passed);
        assert_eq!(row.stratum_inversion_rate, 0.0);
        assert!(row.inversion_rate > 0.0);
    }
}
