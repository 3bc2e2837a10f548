//! Embedding backbones: matrix factorization and LightGCN.

mod checkpoint;
mod graph;

use rand_distr::{Distribution, Normal};

pub use graph::NormalizedGraph;

use crate::error::{Error, Result};
use crate::real::{dot, Real};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Mf,
    LightGcn,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Mf => "mf",
            BackboneKind::LightGcn => "lightgcn",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" | "bprmf" | "bpr-mf" => Ok(BackboneKind::Mf),
            "lightgcn" => Ok(BackboneKind::LightGcn),
            other => Err(Error::InvalidArgument(format!(
                "unknown backbone {other:?}"
            ))),
        }
    }
}

/// Row-major user and item embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings<T> {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub users: Vec<T>,
    pub items: Vec<T>,
}

impl<T: Real> Embeddings<T> {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Embeddings {
            num_users,
            num_items,
            dim,
            users: vec![T::zero(); num_users * dim],
            items: vec![T::zero(); num_items * dim],
        }
    }

    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        dim: usize,
        users: Vec<T>,
        items: Vec<T>,
    ) -> Result<Self> {
        if users.len() != num_users * dim || items.len() != num_items * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {}+{} values, got {}+{}",
                num_users * dim,
                num_items * dim,
                users.len(),
                items.len()
            )));
        }
        Ok(Embeddings {
            num_users,
            num_items,
            dim,
            users,
            items,
        })
    }

    #[inline]
    pub fn user(&self, u: usize) -> &[T] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    #[inline]
    pub fn item(&self, i: usize) -> &[T] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn user_mut(&mut self, u: usize) -> &mut [T] {
        &mut self.users[u * self.dim..(u + 1) * self.dim]
    }

    #[inline]
    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.items[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn score(&self, u: usize, i: usize) -> T {
        dot(self.user(u), self.item(i))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_users == other.num_users
            && self.num_items == other.num_items
            && self.dim == other.dim
    }

    pub fn fill_zero(&mut self) {
        self.users.iter_mut().for_each(|x| *x = T::zero());
        self.items.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.users.iter().chain(self.items.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.users.iter_mut().chain(self.items.iter_mut())
    }

    /// Scores of `u` against every item, written into `out`.
    pub fn scores_into(&self, u: usize, out: &mut [T]) {
        let eu = self.user(u);
        for (i, s) in out.iter_mut().enumerate().take(self.num_items) {
            *s = dot(eu, self.item(i));
        }
    }

    pub fn cast<U: Real>(&self) -> Embeddings<U> {
        Embeddings {
            num_users: self.num_users,
            num_items: self.num_items,
            dim: self.dim,
            users: self.users.iter().map(|x| U::of(x.as_f64())).collect(),
            items: self.items.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

/// A scoring model: raw parameters plus, for LightGCN, a propagation cache.
///
/// The cache is dropped whenever parameters are borrowed mutably, so stale
/// propagated embeddings can never be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: BackboneKind,
    layers: usize,
    params: Embeddings<f32>,
    propagated: Option<Embeddings<f32>>,
}

/// Draws every entry i.i.d. from `N(0, init_scale²)`.
pub fn init_embeddings(
    kind: BackboneKind,
    num_users: usize,
    num_items: usize,
    dim: usize,
    layers: usize,
    seed: u64,
    init_scale: f64,
) -> Result<EmbeddingModel> {
    if num_users == 0 || num_items == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "embedding shape {num_users}x{num_items}x{dim} must be positive"
        )));
    }
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("init_scale {init_scale}")));
    }
    let mut params = Embeddings::zeros(num_users, num_items, dim);
    if init_scale > 0.0 {
        let normal = Normal::new(0.0, init_scale).expect("finite positive scale");
        let mut rng = rng::stream(seed, Purpose::Init, 0, 0);
        for x in params.users.iter_mut() {
            *x = normal.sample(&mut rng) as f32;
        }
        let mut rng = rng::stream(seed, Purpose::Init, 0, 1);
        for x in params.items.iter_mut() {
            *x = normal.sample(&mut rng) as f32;
        }
    }
    EmbeddingModel::new(kind, layers, params)
}

impl EmbeddingModel {
    pub fn new(kind: BackboneKind, layers: usize, params: Embeddings<f32>) -> Result<Self> {
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding entry".into()));
        }
        let layers = match kind {
            BackboneKind::Mf => 0,
            BackboneKind::LightGcn => layers,
        };
        Ok(EmbeddingModel {
            kind,
            layers,
            params,
            propagated: None,
        })
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn num_users(&self) -> usize {
        self.params.num_users
    }

    pub fn num_items(&self) -> usize {
        self.params.num_items
    }

    pub fn params(&self) -> &Embeddings<f32> {
        &self.params
    }

    /// Mutable access to the raw parameters; invalidates propagation.
    pub fn params_mut(&mut self) -> &mut Embeddings<f32> {
        self.propagated = None;
        &mut self.params
    }

    pub fn is_fresh(&self) -> bool {
        self.kind == BackboneKind::Mf || self.propagated.is_some()
    }

    /// Recomputes the LightGCN layer-mean embeddings. A no-op for MF.
    pub fn propagate(&mut self, graph: &NormalizedGraph) -> Result<()> {
        if self.kind == BackboneKind::LightGcn {
            self.propagated = Some(graph.propagate(&self.params, self.layers)?);
        }
        Ok(())
    }

    /// The embeddings that produce scores.
    pub fn scoring(&self) -> Result<&Embeddings<f32>> {
        match self.kind {
            BackboneKind::Mf => Ok(&self.params),
            BackboneKind::LightGcn => self.propagated.as_ref().ok_or(Error::StalePropagation),
        }
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.num_users() {
            return Err(Error::InvalidArgument(format!(
                "user {u} >= {}",
                self.num_users()
            )));
        }
        Ok(())
    }

    pub fn score(&self, u: usize, i: usize) -> Result<f32> {
        self.check_user(u)?;
        if i >= self.num_items() {
            return Err(Error::InvalidArgument(format!(
                "item {i} >= {}",
                self.num_items()
            )));
        }
        Ok(self.scoring()?.score(u, i))
    }

    /// Score for every item; items where `mask` is `true` come back `None`.
    pub fn score_all(&self, u: usize, mask: Option<&[bool]>) -> Result<Vec<Option<f32>>> {
        self.check_user(u)?;
        let emb = self.scoring()?;
        if let Some(m) = mask {
            if m.len() != self.num_items() {
                return Err(Error::DimensionMismatch(format!(
                    "mask has {} entries for {} items",
                    m.len(),
                    self.num_items()
                )));
            }
        }
        let mut scores = vec![0.0f32; self.num_items()];
        emb.scores_into(u, &mut scores);
        Ok(scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| match mask {
                Some(m) if m[i] => None,
                _ => Some(s),
            })
            .collect())
    }

    /// The `n` best items for `u` outside `exclude` (sorted ascending).
    pub fn top_n(&self, u: usize, n: usize, exclude: &[u32]) -> Result<Vec<u32>> {
        self.check_user(u)?;
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        let emb = self.scoring()?;
        let mut scores = vec![0.0f32; self.num_items()];
        emb.scores_into(u, &mut scores);
        Ok(top_n_by_score(&scores, n, |i| {
            exclude.binary_search(&i).is_ok()
        }))
    }
}

/// Indices of the `n` largest scores, descending, ties broken by ascending
/// index, skipping items for which `excluded` holds.
pub fn top_n_by_score<T: PartialOrd + Copy>(
    scores: &[T],
    n: usize,
    excluded: impl Fn(u32) -> bool,
) -> Vec<u32> {
    // `best` is kept sorted best-first; n is small in every caller.
    let mut best: Vec<(T, u32)> = Vec::with_capacity(n + 1);
    for (i, &s) in scores.iter().enumerate() {
        let i = i as u32;
        if excluded(i) {
            continue;
        }
        if best.len() == n {
            let (ws, _) = best[n - 1];
            // Later indices lose ties, so only a strictly larger score enters.
            if !(s > ws) {
                continue;
            }
        }
        let pos = best
            .iter()
            .position(|&(bs, _)| s > bs)
            .unwrap_or(best.len());
        best.insert(pos, (s, i));
        best.truncate(n);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mf(users: Vec<f32>, items: Vec<f32>, dim: usize) -> EmbeddingModel {
        let m = users.len() / dim;
        let n = items.len() / dim;
        EmbeddingModel::new(
            BackboneKind::Mf,
            0,
            Embeddings::from_parts(m, n, dim, users, items).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_embeddings(BackboneKind::Mf, 5, 7, 10, 0, 3, 0.1).unwrap();
        let b = init_embeddings(BackboneKind::Mf, 5, 7, 10, 0, 3, 0.1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params().users.len(), 50);
        assert_eq!(a.params().items.len(), 70);
        let t = init_embeddings(BackboneKind::Mf, 5, 7, 100, 0, 3, 0.1).unwrap();
        assert_eq!(t.dim(), 100);
    }

    #[test]
    fn zero_scale_gives_zero_scores() {
        let m = init_embeddings(BackboneKind::Mf, 2, 3, 4, 0, 3, 0.0).unwrap();
        assert!(m.params().iter().all(|&x| x == 0.0));
        assert_eq!(m.score(1, 2).unwrap(), 0.0);
    }

    #[test]
    fn score_examples() {
        let m = mf(vec![1.0, 0.0], vec![0.0, 1.0], 2);
        assert_eq!(m.score(0, 0).unwrap(), 0.0);
        let m = mf(vec![1.0, 1.0], vec![1.0, 1.0], 2);
        assert_eq!(m.score(0, 0).unwrap(), 2.0);
        assert!(m.score(1, 0).is_err());
        assert!(m.score(0, 1).is_err());
    }

    #[test]
    fn score_all_matches_pointwise() {
        let m = init_embeddings(BackboneKind::Mf, 3, 6, 10, 0, 11, 0.5).unwrap();
        let mask = [false, true, false, false, true, false];
        for u in 0..3 {
            let all = m.score_all(u, Some(&mask)).unwrap();
            for (i, s) in all.iter().enumerate() {
                match s {
                    None => assert!(mask[i]),
                    Some(s) => assert_eq!(*s, m.score(u, i).unwrap()),
                }
            }
        }
    }

    #[test]
    fn top_n_examples() {
        let s = [0.1f32, 0.9, 0.5];
        assert_eq!(top_n_by_score(&s, 2, |_| false), vec![1, 2]);
        assert_eq!(top_n_by_score(&[0.5f32, 0.5], 2, |_| false), vec![0, 1]);
        assert_eq!(top_n_by_score(&s, 2, |i| i == 1), vec![2, 0]);
        assert_eq!(top_n_by_score(&s, 5, |_| false), vec![1, 2, 0]);
        assert_eq!(
            top_n_by_score(&[0.5f32, 0.7, 0.5, 0.7], 3, |_| false),
            vec![1, 3, 0]
        );
    }

    #[test]
    fn lightgcn_requires_fresh_propagation() {
        let mut m = init_embeddings(BackboneKind::LightGcn, 2, 2, 3, 2, 1, 0.1).unwrap();
        assert!(matches!(m.score(0, 0), Err(Error::StalePropagation)));
        let g = NormalizedGraph::from_train(2, 2, &[vec![0], vec![1]]);
        m.propagate(&g).unwrap();
        assert!(m.score(0, 0).is_ok());
        m.params_mut().users[0] += 1.0;
        assert!(matches!(m.score(0, 0), Err(Error::StalePropagation)));
    }

    proptest::proptest! {
        #[test]
        fn top_n_is_a_sorted_prefix(scores in proptest::collection::vec(-3i32..3, 1..30), n in 1usize..8, ex in proptest::collection::vec(0u32..30, 0..6)) {
            let scores: Vec<f32> = scores.into_iter().map(|s| s as f32).collect();
            let mut ex = ex;
            ex.sort_unstable();
            let top = top_n_by_score(&scores, n, |i| ex.binary_search(&i).is_ok());
            let mut brute: Vec<u32> = (0..scores.len() as u32).filter(|i| ex.binary_search(i).is_err()).collect();
            brute.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
            brute.truncate(n);
            proptest::prop_assert_eq!(top, brute);
        }
    }
}
