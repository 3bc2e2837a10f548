//! Interaction ingestion, filtering, per-user splitting, and item popularity.

mod archive;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// One binarized user–item interaction with dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    /// Kept for reporting; training ignores it.
    pub timestamp: i64,
}

/// Interactions plus the raw-id tables that produced their dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    pub interactions: Vec<Interaction>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl InteractionLog {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Builds a log from already-dense `(user, item)` pairs; raw ids are the
    /// decimal indices.
    pub fn from_pairs(num_users: usize, num_items: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        let mut interactions = Vec::with_capacity(pairs.len());
        let mut seen = HashSet::with_capacity(pairs.len());
        for &(u, i) in pairs {
            if u as usize >= num_users || i as usize >= num_items {
                return Err(Error::InvalidArgument(format!(
                    "pair ({u}, {i}) outside {num_users}x{num_items}"
                )));
            }
            if seen.insert((u, i)) {
                interactions.push(Interaction {
                    user: u,
                    item: i,
                    rating: 1.0,
                    timestamp: 0,
                });
            }
        }
        if interactions.is_empty() {
            return Err(Error::Empty("no interactions".into()));
        }
        Ok(InteractionLog {
            interactions,
            user_ids: (0..num_users).map(|u| u.to_string()).collect(),
            item_ids: (0..num_items).map(|i| i.to_string()).collect(),
        })
    }
}

fn split_fields<'a>(line: &'a str, delimiter: &'a str) -> Vec<&'a str> {
    if delimiter.trim().is_empty() {
        line.split_whitespace().collect()
    } else {
        line.split(delimiter).map(str::trim).collect()
    }
}

/// Reads a delimited interaction file.
///
/// Each non-blank line holds `user, item[, rating[, timestamp]]`. A missing
/// rating counts as 1. Rows rated below `rating_threshold` are dropped, then
/// the surviving raw ids are mapped to dense indices in order of first
/// appearance. Repeated `(user, item)` rows keep the first occurrence. A
/// delimiter made only of whitespace splits on any whitespace run.
pub fn load_interactions(
    path: impl AsRef<Path>,
    delimiter: &str,
    rating_threshold: f64,
) -> Result<InteractionLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut interactions = Vec::new();
    let mut nonblank = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        nonblank += 1;
        let fields = split_fields(line, delimiter);
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(
                lineno,
                format!("expected at least 2 fields separated by {delimiter:?}"),
            ));
        }
        let rating = match fields.get(2) {
            Some(r) => r
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("rating {r:?}: {e}")))?,
            None => 1.0,
        };
        let timestamp = match fields.get(3) {
            Some(t) => t
                .parse::<i64>()
                .map_err(|e| parse_err(lineno, format!("timestamp {t:?}: {e}")))?,
            None => 0,
        };
        if rating < rating_threshold {
            continue;
        }
        let user = *user_index.entry(fields[0].to_string()).or_insert_with(|| {
            user_ids.push(fields[0].to_string());
            (user_ids.len() - 1) as u32
        });
        let item = *item_index.entry(fields[1].to_string()).or_insert_with(|| {
            item_ids.push(fields[1].to_string());
            (item_ids.len() - 1) as u32
        });
        if seen.insert((user, item)) {
            interactions.push(Interaction {
                user,
                item,
                rating,
                timestamp,
            });
        }
    }

    if nonblank == 0 {
        return Err(Error::Empty(format!(
            "{} has no interactions",
            path.display()
        )));
    }
    if interactions.is_empty() {
        return Err(Error::Empty(format!(
            "no rows of {} rated at or above {rating_threshold}",
            path.display()
        )));
    }
    Ok(InteractionLog {
        interactions,
        user_ids,
        item_ids,
    })
}

/// Re-indexes users and items so that only those referenced by `keep` remain,
/// preserving relative index order.
fn compact(log: &InteractionLog, interactions: Vec<Interaction>) -> InteractionLog {
    let mut user_used = vec![false; log.num_users()];
    let mut item_used = vec![false; log.num_items()];
    for x in &interactions {
        user_used[x.user as usize] = true;
        item_used[x.item as usize] = true;
    }
    let remap = |used: &[bool], ids: &[String]| {
        let mut map = vec![u32::MAX; used.len()];
        let mut kept = Vec::new();
        for (old, &u) in used.iter().enumerate() {
            if u {
                map[old] = kept.len() as u32;
                kept.push(ids[old].clone());
            }
        }
        (map, kept)
    };
    let (umap, user_ids) = remap(&user_used, &log.user_ids);
    let (imap, item_ids) = remap(&item_used, &log.item_ids);
    let interactions = interactions
        .into_iter()
        .map(|mut x| {
            x.user = umap[x.user as usize];
            x.item = imap[x.item as usize];
            x
        })
        .collect();
    InteractionLog {
        interactions,
        user_ids,
        item_ids,
    }
}

/// Keeps users with at least `min_count` interactions (single pass, no
/// iterative refiltering) and re-compacts both index spaces.
pub fn filter_min_interactions(log: &InteractionLog, min_count: usize) -> Result<InteractionLog> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    let mut counts = vec![0usize; log.num_users()];
    for x in &log.interactions {
        counts[x.user as usize] += 1;
    }
    let kept: Vec<Interaction> = log
        .interactions
        .iter()
        .filter(|x| counts[x.user as usize] >= min_count)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "every user has fewer than {min_count} interactions"
        )));
    }
    Ok(compact(log, kept))
}

/// Keeps a seeded random `fraction` of users (at least one) and re-compacts.
pub fn subsample_users(log: &InteractionLog, fraction: f64, seed: u64) -> Result<InteractionLog> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "user fraction {fraction} outside (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(log.clone());
    }
    let mut users: Vec<u32> = (0..log.num_users() as u32).collect();
    users.shuffle(&mut rng::stream(seed, Purpose::Subsample, 0, 0));
    let take = ((log.num_users() as f64 * fraction).floor() as usize).max(1);
    let mut keep = vec![false; log.num_users()];
    for &u in &users[..take] {
        keep[u as usize] = true;
    }
    let kept = log
        .interactions
        .iter()
        .filter(|x| keep[x.user as usize])
        .cloned()
        .collect();
    Ok(compact(log, kept))
}

/// Which per-user split a query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Per-user train/validation/test item sets with training popularity.
///
/// Item lists are sorted ascending. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Vec<u32>>,
    pub valid: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
    /// Training-interaction count per item.
    pub popularity: Vec<u32>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

fn floor_frac(count: usize, frac: f64) -> usize {
    // Guard against products like 0.1 * 30 landing a hair below an integer.
    (count as f64 * frac + 1e-9).floor() as usize
}

/// Randomly splits each user's interactions.
///
/// Test takes `max(1, floor(count * test_frac))` items, validation takes
/// `floor(rest * valid_frac)` of the remainder, and training keeps the rest.
/// Each user draws from its own seed stream.
pub fn split_per_user(
    log: &InteractionLog,
    test_frac: f64,
    valid_frac: f64,
    seed: u64,
) -> Result<InteractionDataset> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_frac {test_frac} outside (0, 1)"
        )));
    }
    if !(0.0..1.0).contains(&valid_frac) {
        return Err(Error::InvalidArgument(format!(
            "valid_frac {valid_frac} outside [0, 1)"
        )));
    }
    let m = log.num_users();
    let mut per_user: Vec<Vec<u32>> = vec![Vec::new(); m];
    for x in &log.interactions {
        per_user[x.user as usize].push(x.item);
    }

    let mut train = Vec::with_capacity(m);
    let mut valid = Vec::with_capacity(m);
    let mut test = Vec::with_capacity(m);
    for (u, mut items) in per_user.into_iter().enumerate() {
        let count = items.len();
        let mut rng = rng::stream(seed, Purpose::Split, 0, u as u64);
        items.shuffle(&mut rng);
        let n_test = floor_frac(count, test_frac).max(1);
        let rest = count.saturating_sub(n_test);
        let n_valid = floor_frac(rest, valid_frac);
        if rest == 0 || rest == n_valid {
            return Err(Error::InvalidArgument(format!(
                "user {} ({} interactions) would have an empty training split",
                log.user_ids[u], count
            )));
        }
        let mut t: Vec<u32> = items[..n_test].to_vec();
        let mut v: Vec<u32> = items[n_test..n_test + n_valid].to_vec();
        let mut tr: Vec<u32> = items[n_test + n_valid..].to_vec();
        t.sort_unstable();
        v.sort_unstable();
        tr.sort_unstable();
        test.push(t);
        valid.push(v);
        train.push(tr);
    }
    let popularity = compute_popularity(log.num_items(), &train);
    Ok(InteractionDataset {
        num_users: m,
        num_items: log.num_items(),
        train,
        valid,
        test,
        popularity,
        user_ids: log.user_ids.clone(),
        item_ids: log.item_ids.clone(),
    })
}

/// Number of users whose training split contains each item.
pub fn compute_popularity(num_items: usize, train: &[Vec<u32>]) -> Vec<u32> {
    let mut z = vec![0u32; num_items];
    for items in train {
        for &i in items {
            z[i as usize] += 1;
        }
    }
    z
}

impl InteractionDataset {
    pub fn split(&self, which: Split) -> &[Vec<u32>] {
        match which {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn num_train_interactions(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn in_train(&self, user: usize, item: u32) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    /// Items already known for `user` (train or validation); these are never
    /// candidates for distillation or test-time ranking.
    pub fn is_known(&self, user: usize, item: u32) -> bool {
        self.train[user].binary_search(&item).is_ok()
            || self.valid[user].binary_search(&item).is_ok()
    }

    /// Checks disjointness, sortedness, index bounds, and popularity.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_items as u32;
        for u in 0..self.num_users {
            let mut all: Vec<u32> = Vec::new();
            for s in [&self.train[u], &self.valid[u], &self.test[u]] {
                if s.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidArgument(format!(
                        "user {u}: split not sorted"
                    )));
                }
                if s.iter().any(|&i| i >= n) {
                    return Err(Error::InvalidArgument(format!(
                        "user {u}: item out of range"
                    )));
                }
                all.extend_from_slice(s);
            }
            let len = all.len();
            all.sort_unstable();
            all.dedup();
            if all.len() != len {
                return Err(Error::InvalidArgument(format!("user {u}: splits overlap")));
            }
        }
        if compute_popularity(self.num_items, &self.train) != self.popularity {
            return Err(Error::InvalidArgument(
                "popularity does not match training splits".into(),
            ));
        }
        Ok(())
    }

    /// Draws a uniformly random item outside `train[user]`, or `None` when the
    /// user has interacted with every item.
    pub fn sample_unobserved(&self, user: usize, rng: &mut crate::rng::Rng) -> Option<u32> {
        let pos = &self.train[user];
        let free = self.num_items - pos.len();
        if free == 0 {
            return None;
        }
        if pos.len() * 2 <= self.num_items {
            loop {
                let i = rng.random_range(0..self.num_items as u32);
                if pos.binary_search(&i).is_err() {
                    return Some(i);
                }
            }
        }
        // Dense users: pick the k-th free index directly.
        let mut k = rng.random_range(0..free as u32);
        let mut prev = 0u32;
        for &p in pos {
            let gap = p - prev;
            if k < gap {
                return Some(prev + k);
            }
            k -= gap;
            prev = p + 1;
        }
        Some(prev + k)
    }
}

/// Summary counts used in logs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl InteractionDataset {
    pub fn stats(&self) -> DatasetStats {
        let count = |s: &[Vec<u32>]| s.iter().map(Vec::len).sum();
        DatasetStats {
            users: self.num_users,
            items: self.num_items,
            train: count(&self.train),
            valid: count(&self.valid),
            test: count(&self.test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_line_whitespace() {
        let f = write_tmp("u1 i1 5 0\n");
        let log = load_interactions(f.path(), " ", 0.0).unwrap();
        assert_eq!(log.interactions.len(), 1);
        assert_eq!(log.num_users(), 1);
        assert_eq!(log.num_items(), 1);
        assert_eq!(log.interactions[0].timestamp, 0);
    }

    #[test]
    fn threshold_drops_low_ratings() {
        let f = write_tmp("1::10::1::5\n2::10::3::6\n3::11::5::7\n");
        let log = load_interactions(f.path(), "::", 4.0).unwrap();
        assert_eq!(log.interactions.len(), 1);
        assert_eq!(log.user_ids, vec!["3"]);
        assert_eq!(log.item_ids, vec!["11"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("1,2,3\n\n4\n");
        match load_interactions(f.path(), ",", 0.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("1,2,x\n");
        assert!(matches!(
            load_interactions(f.path(), ",", 0.0),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("\n\n");
        assert!(matches!(
            load_interactions(f.path(), ",", 0.0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn tab_delimiter_and_missing_rating() {
        let f = write_tmp("a\tx\na\ty\nb\tx\na\tx\n");
        let log = load_interactions(f.path(), "\t", 0.0).unwrap();
        assert_eq!(log.interactions.len(), 3, "duplicate row is dropped");
        assert!(log.interactions.iter().all(|x| x.rating == 1.0));
    }

    fn log_with_counts(counts: &[usize], num_items: usize) -> InteractionLog {
        let mut pairs = Vec::new();
        for (u, &c) in counts.iter().enumerate() {
            for k in 0..c {
                pairs.push((u as u32, ((u * 7 + k) % num_items) as u32));
            }
        }
        InteractionLog::from_pairs(counts.len(), num_items, &pairs).unwrap()
    }

    #[test]
    fn filter_boundary_is_inclusive() {
        let log = log_with_counts(&[25, 19, 20], 40);
        let kept = filter_min_interactions(&log, 20).unwrap();
        assert_eq!(kept.user_ids, vec!["0", "2"]);
        assert_eq!(kept.interactions.len(), 45);
        assert!(kept
            .interactions
            .iter()
            .all(|x| (x.item as usize) < kept.num_items()));
    }

    #[test]
    fn filter_min_one_is_identity() {
        let log = log_with_counts(&[3, 1, 2], 3);
        assert_eq!(filter_min_interactions(&log, 1).unwrap(), log);
    }

    #[test]
    fn filter_everyone_out_errors() {
        let log = log_with_counts(&[3, 1], 5);
        assert!(matches!(
            filter_min_interactions(&log, 10),
            Err(Error::Empty(_))
        ));
        assert!(filter_min_interactions(&log, 0).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let log = log_with_counts(&[20], 30);
        let ds = split_per_user(&log, 0.1, 0.1, 42).unwrap();
        assert_eq!(ds.test[0].len(), 2);
        assert_eq!(ds.valid[0].len(), 1);
        assert_eq!(ds.train[0].len(), 17);
        ds.validate().unwrap();
    }

    #[test]
    fn split_small_user_still_gets_a_test_item() {
        let log = log_with_counts(&[3], 5);
        let ds = split_per_user(&log, 0.1, 0.0, 1).unwrap();
        assert_eq!(ds.test[0].len(), 1);
        assert!(ds.valid[0].is_empty());
        assert_eq!(ds.train[0].len(), 2);
    }

    #[test]
    fn split_rejects_empty_train() {
        let log = log_with_counts(&[1], 5);
        assert!(split_per_user(&log, 0.1, 0.0, 1).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let log = log_with_counts(&[25, 30, 22], 60);
        let a = split_per_user(&log, 0.1, 0.1, 9).unwrap();
        let b = split_per_user(&log, 0.1, 0.1, 9).unwrap();
        let c = split_per_user(&log, 0.1, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn popularity_counts() {
        let z = compute_popularity(3, &[vec![0, 1], vec![0]]);
        assert_eq!(z, vec![2, 1, 0]);
    }

    #[test]
    fn subsample_keeps_fraction() {
        let log = log_with_counts(&[5; 10], 20);
        let half = subsample_users(&log, 0.5, 3).unwrap();
        assert_eq!(half.num_users(), 5);
        assert_eq!(half.interactions.len(), 25);
        assert_eq!(subsample_users(&log, 1.0, 3).unwrap(), log);
    }

    #[test]
    fn unobserved_sampler_handles_dense_users() {
        let log = InteractionLog::from_pairs(1, 4, &[(0, 0), (0, 1), (0, 3)]).unwrap();
        let ds = InteractionDataset {
            num_users: 1,
            num_items: 4,
            train: vec![vec![0, 1, 3]],
            valid: vec![vec![]],
            test: vec![vec![]],
            popularity: vec![1, 1, 0, 1],
            user_ids: log.user_ids.clone(),
            item_ids: log.item_ids.clone(),
        };
        let mut rng = crate::rng::stream(0, Purpose::Bpr, 0, 0);
        for _ in 0..20 {
            assert_eq!(ds.sample_unobserved(0, &mut rng), Some(2));
        }
    }
}
