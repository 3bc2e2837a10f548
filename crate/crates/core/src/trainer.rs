//! BPR training with Adam, L2 regularization, and validation early stopping.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::backbone::{BackboneKind, EmbeddingModel, Embeddings, NormalizedGraph};
use crate::dataset::InteractionDataset;
use crate::distill::{
    combined_objective, DistillBatch, Distiller, EpochTerms, ObjectiveValue, PairNormalization,
};
use crate::error::{Error, Result};
use crate::eval::validation_ndcg;
use crate::real::{log_sigmoid, sigmoid, Real};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_coeff: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Cutoff of the validation NDCG used for early stopping.
    pub eval_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            l2_coeff: 1e-4,
            batch_size: 2048,
            max_epochs: 1000,
            patience: 100,
            seed: 0,
            eval_n: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be > 0", self.learning_rate));
        }
        if !(self.l2_coeff >= 0.0) {
            return bad(format!("l2 coefficient {} must be >= 0", self.l2_coeff));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.eval_n == 0 {
            return bad("batch size, max epochs, patience and eval N must be >= 1".into());
        }
        Ok(())
    }
}

/// One triple for `user`: positive uniform over its training items,
/// negative uniform over the rest. `None` if either side is empty.
pub fn sample_user_triple(
    dataset: &InteractionDataset,
    user: usize,
    rng: &mut rng::Rng,
) -> Option<Triple> {
    let pos = &dataset.train[user];
    if pos.is_empty() {
        return None;
    }
    let p = pos[rng.random_range(0..pos.len())];
    let n = dataset.sample_unobserved(user, rng)?;
    Some(Triple {
        user: user as u32,
        pos: p,
        neg: n,
    })
}

/// One triple per training interaction with a fresh negative, shuffled.
/// Users who interacted with every item are skipped.
pub fn epoch_triples(dataset: &InteractionDataset, seed: u64, epoch: usize) -> Vec<Triple> {
    let mut triples = Vec::with_capacity(dataset.num_train_interactions());
    for (u, items) in dataset.train.iter().enumerate() {
        let mut rng = rng::stream(seed, Purpose::Bpr, epoch as u64, u as u64);
        for &p in items {
            match dataset.sample_unobserved(u, &mut rng) {
                Some(n) => triples.push(Triple {
                    user: u as u32,
                    pos: p,
                    neg: n,
                }),
                None => break,
            }
        }
    }
    triples.shuffle(&mut rng::stream(seed, Purpose::Batches, epoch as u64, 0));
    triples
}

/// Adds `scale · ∇` of `l2 · mean_t(‖e_u‖² + ‖e_i⁺‖² + ‖e_i⁻‖²)` into `grad`.
pub fn l2_penalty_and_grad<T: Real>(
    emb: &Embeddings<T>,
    triples: &[Triple],
    l2_coeff: f64,
    scale: f64,
    grad: &mut Embeddings<T>,
) -> f64 {
    if triples.is_empty() || l2_coeff == 0.0 {
        return 0.0;
    }
    let norm = l2_coeff / triples.len() as f64;
    let c = T::of(2.0 * norm * scale);
    let mut sq = 0.0;
    for t in triples {
        let row = emb.user(t.user as usize);
        sq += row.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>();
        grad.user_mut(t.user as usize)
            .iter_mut()
            .zip(row)
            .for_each(|(g, &x)| *g += c * x);
        for i in [t.pos, t.neg] {
            let row = emb.item(i as usize);
            sq += row.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>();
            grad.item_mut(i as usize)
                .iter_mut()
                .zip(row)
                .for_each(|(g, &x)| *g += c * x);
        }
    }
    norm * sq
}

/// BPR loss `-mean ln σ(ŝ_ui⁺ - ŝ_ui⁻) + l2 · mean(squared norms)`.
///
/// Adds `scale · ∇` into `grad`, returns the unscaled loss.
pub fn bpr_loss_and_grad<T: Real>(
    emb: &Embeddings<T>,
    triples: &[Triple],
    l2_coeff: f64,
    scale: f64,
    grad: &mut Embeddings<T>,
) -> Result<f64> {
    if triples.is_empty() {
        return Ok(0.0);
    }
    let norm = 1.0 / triples.len() as f64;
    let d = emb.dim;
    let mut loss = 0.0;
    for t in triples {
        let (u, p, n) = (t.user as usize, t.pos as usize, t.neg as usize);
        let x = emb.score(u, p).as_f64() - emb.score(u, n).as_f64();
        loss -= log_sigmoid(x);
        let c = T::of(-sigmoid(-x) * norm * scale);
        for k in 0..d {
            let (eu, ep, en) = (
                emb.users[u * d + k],
                emb.items[p * d + k],
                emb.items[n * d + k],
            );
            grad.users[u * d + k] += c * (ep - en);
            grad.items[p * d + k] += c * eu;
            grad.items[n * d + k] -= c * eu;
        }
    }
    let loss = loss * norm + l2_penalty_and_grad(emb, triples, l2_coeff, scale, grad);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("bpr"));
    }
    Ok(loss)
}

/// Full mini-batch objective for either backbone, with gradients taken with
/// respect to the raw parameters `params`.
///
/// For LightGCN the losses are evaluated on the propagated embeddings and
/// the gradient is mapped back through the (symmetric) propagation; L2 acts
/// on the raw embeddings.
pub fn objective_and_grad<T: Real>(
    kind: BackboneKind,
    graph: Option<&NormalizedGraph>,
    layers: usize,
    params: &Embeddings<T>,
    triples: &[Triple],
    l2_coeff: f64,
    distill: DistillBatch<'_>,
    lambda: f64,
    grad: &mut Embeddings<T>,
) -> Result<ObjectiveValue> {
    match kind {
        BackboneKind::Mf => combined_objective(params, triples, l2_coeff, distill, lambda, grad),
        BackboneKind::LightGcn => {
            let graph = graph
                .ok_or_else(|| Error::InvalidArgument("LightGCN training needs a graph".into()))?;
            let prop = graph.propagate(params, layers)?;
            let mut gprop = Embeddings::zeros(params.num_users, params.num_items, params.dim);
            let mut value = combined_objective(&prop, triples, 0.0, distill, lambda, &mut gprop)?;
            let back = graph.propagate(&gprop, layers)?;
            for (g, b) in grad.iter_mut().zip(back.iter()) {
                *g += *b;
            }
            let reg = l2_penalty_and_grad(params, triples, l2_coeff, 1.0, grad);
            value.base += reg;
            value.total += reg;
            Ok(value)
        }
    }
}

/// Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Embeddings<T>,
    pub second: Embeddings<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(like: &Embeddings<T>) -> Self {
        AdamState {
            first: Embeddings::zeros(like.num_users, like.num_items, like.dim),
            second: Embeddings::zeros(like.num_users, like.num_items, like.dim),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam step.
pub fn adam_update<T: Real>(
    params: &mut Embeddings<T>,
    grads: &Embeddings<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first) {
        return Err(Error::DimensionMismatch(
            "adam: parameter, gradient and moment shapes differ".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - state.beta1), T::of(1.0 - state.beta2));
    let c1 = T::of(1.0 / (1.0 - state.beta1.powi(t)));
    let c2 = T::of(1.0 / (1.0 - state.beta2.powi(t)));
    let lr = T::of(lr);
    let eps = T::of(state.eps);
    let moments = state.first.iter_mut().zip(state.second.iter_mut());
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads.iter()).zip(moments) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let mhat = *m * c1;
        let vhat = *v * c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Outcome of observing one validation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if value <= b => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, value));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_ndcg: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,valid_ndcg10,elapsed_seconds\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.8},{:.8},{:.3}",
                r.epoch, r.train_loss, r.valid_ndcg, r.elapsed_seconds
            );
        }
        s
    }

    /// The log without wall-clock times, for determinism checks.
    pub fn deterministic_part(&self) -> Vec<(usize, u64, u64)> {
        self.records
            .iter()
            .map(|r| (r.epoch, r.train_loss.to_bits(), r.valid_ndcg.to_bits()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (propagated if LightGCN).
    pub model: EmbeddingModel,
    pub log: TrainingLog,
    pub best_epoch: usize,
    pub best_valid_ndcg: f64,
}

/// Base or distillation objective for [`fit`].
#[derive(Clone, Copy)]
pub enum Objective<'a> {
    Base,
    Distill(&'a Distiller),
}

pub fn fit(
    model: EmbeddingModel,
    dataset: &InteractionDataset,
    graph: Option<&NormalizedGraph>,
    config: &TrainConfig,
    objective: Objective<'_>,
) -> Result<TrainOutcome> {
    fit_with(model, dataset, graph, config, objective, |_| {})
}

/// Trains until early stopping or `max_epochs`, calling `on_epoch` after
/// each epoch's validation.
///
/// Each epoch draws one BPR triple per training interaction and splits them
/// into mini-batches. Users carrying distillation terms are shuffled and
/// dealt out over the same number of batches, so every batch's objective is
/// `L_R + λ·L_D` over its own slice of users.
pub fn fit_with(
    mut model: EmbeddingModel,
    dataset: &InteractionDataset,
    graph: Option<&NormalizedGraph>,
    config: &TrainConfig,
    objective: Objective<'_>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.num_users() != dataset.num_users || model.num_items() != dataset.num_items {
        return Err(Error::DimensionMismatch(
            "model shape differs from dataset".into(),
        ));
    }
    if dataset.valid.iter().all(Vec::is_empty) {
        return Err(Error::Empty("fit needs a nonempty validation split".into()));
    }
    let kind = model.kind();
    let layers = model.layers();
    if kind == BackboneKind::LightGcn && graph.is_none() {
        return Err(Error::InvalidArgument(
            "LightGCN training needs a graph".into(),
        ));
    }

    let start = Instant::now();
    let mut adam = AdamState::new(model.params());
    let mut grad = Embeddings::zeros(model.num_users(), model.num_items(), model.dim());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params().clone();
    let mut log = TrainingLog::default();

    for epoch in 1..=config.max_epochs {
        let triples = epoch_triples(dataset, config.seed, epoch);
        let batches = triples.len().div_ceil(config.batch_size).max(1);
        let (terms, lambda, mu) = match objective {
            Objective::Base => (None, 0.0, 0.0),
            Objective::Distill(d) => {
                let mut t = d.epoch_terms(epoch);
                t.shuffle(&mut rng::stream(
                    config.seed,
                    Purpose::Batches,
                    epoch as u64,
                    1,
                ));
                (Some((t, d.normalization)), d.lambda, d.plan.mu)
            }
        };

        let mut epoch_loss = 0.0;
        for b in 0..batches {
            let lo = b * config.batch_size;
            let hi = ((b + 1) * config.batch_size).min(triples.len());
            let batch = &triples[lo.min(hi)..hi];
            let distill = match terms.as_ref() {
                None => DistillBatch::None,
                Some((t, norm)) => {
                    let (ulo, uhi) = (b * t.len() / batches, (b + 1) * t.len() / batches);
                    match t {
                        EpochTerms::Pairs(p) => match norm {
                            PairNormalization::PerUser => DistillBatch::Pairs(&p[ulo..uhi]),
                            PairNormalization::PerPair => DistillBatch::PairMean(&p[ulo..uhi]),
                        },
                        EpochTerms::Pointwise(p) => DistillBatch::Pointwise {
                            targets: &p[ulo..uhi],
                            mu,
                        },
                    }
                }
            };
            grad.fill_zero();
            let value = objective_and_grad(
                kind,
                graph,
                layers,
                model.params(),
                batch,
                config.l2_coeff,
                distill,
                lambda,
                &mut grad,
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss(_) => Error::Divergence {
                    epoch,
                    value: f64::NAN,
                },
                other => other,
            })?;
            if !value.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    value: value.total,
                });
            }
            epoch_loss += value.total;
            adam_update(model.params_mut(), &grad, &mut adam, config.learning_rate)?;
        }
        if let Some(g) = graph {
            model.propagate(g)?;
        }
        let ndcg = validation_ndcg(&model, dataset, config.eval_n)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            valid_ndcg: ndcg,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
        match stopper.observe(epoch, ndcg) {
            StopDecision::Improved => best_params.clone_from(model.params()),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let (best_epoch, best_valid_ndcg) = stopper.best().expect("at least one epoch ran");
    let mut best = EmbeddingModel::new(kind, layers, best_params)?;
    if let Some(g) = graph {
        best.propagate(g)?;
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
        best_valid_ndcg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_embeddings;
    use crate::dataset::{split_per_user, InteractionLog};

    fn tiny_dataset() -> InteractionDataset {
        let mut pairs = Vec::new();
        for u in 0..5u32 {
            for k in 0..8u32 {
                pairs.push((u, (u + 2 * k) % 12));
            }
        }
        split_per_user(
            &InteractionLog::from_pairs(5, 12, &pairs).unwrap(),
            0.2,
            0.2,
            1,
        )
        .unwrap()
    }

    #[test]
    fn forced_triple() {
        let log = InteractionLog::from_pairs(1, 2, &[(0, 0)]).unwrap();
        let ds = InteractionDataset {
            num_users: 1,
            num_items: 2,
            train: vec![vec![0]],
            valid: vec![vec![]],
            test: vec![vec![]],
            popularity: vec![1, 0],
            user_ids: log.user_ids,
            item_ids: log.item_ids,
        };
        let mut rng = rng::stream(0, Purpose::Bpr, 0, 0);
        for _ in 0..10 {
            assert_eq!(
                sample_user_triple(&ds, 0, &mut rng),
                Some(Triple {
                    user: 0,
                    pos: 0,
                    neg: 1
                })
            );
        }
    }

    #[test]
    fn epoch_triples_replay() {
        let ds = tiny_dataset();
        assert_eq!(epoch_triples(&ds, 3, 1), epoch_triples(&ds, 3, 1));
        assert_ne!(epoch_triples(&ds, 3, 1), epoch_triples(&ds, 3, 2));
        let t = epoch_triples(&ds, 3, 1);
        assert_eq!(t.len(), ds.num_train_interactions());
        assert!(t
            .iter()
            .all(|t| ds.in_train(t.user as usize, t.pos) && !ds.in_train(t.user as usize, t.neg)));
    }

    #[test]
    fn bpr_equal_scores_and_asymptote() {
        let e = Embeddings::from_parts(1, 2, 1, vec![1.0f64], vec![0.5, 0.5]).unwrap();
        let mut g = Embeddings::zeros(1, 2, 1);
        let t = [Triple {
            user: 0,
            pos: 0,
            neg: 1,
        }];
        let l = bpr_loss_and_grad(&e, &t, 0.0, 1.0, &mut g).unwrap();
        assert!((l - 0.693147).abs() < 1e-6);
        let e = Embeddings::from_parts(1, 2, 1, vec![1.0f64], vec![30.0, 0.0]).unwrap();
        assert!(bpr_loss_and_grad(&e, &t, 0.0, 1.0, &mut g).unwrap() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = Embeddings::from_parts(1, 1, 2, vec![0.3f64, -0.1], vec![1.0, 2.0]).unwrap();
        let before = p.clone();
        let g = Embeddings::zeros(1, 1, 2);
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &g, &mut s, 0.01).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Embeddings::from_parts(1, 1, 1, vec![1.0f64], vec![-2.0]).unwrap();
        let g = Embeddings::from_parts(1, 1, 1, vec![0.37f64], vec![-5.0]).unwrap();
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &g, &mut s, 0.01).unwrap();
        assert!((p.users[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p.items[0] - (-2.0 + 0.01)).abs() < 1e-9);
    }

    #[test]
    fn early_stopping_patience_one() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, 0.2), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.1), StopDecision::Stop);
        assert_eq!(s.best(), Some((1, 0.2)));
        let mut s = EarlyStopping::new(3);
        assert_eq!(s.observe(1, 0.2), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.2), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.3), StopDecision::Improved);
    }

    #[test]
    fn fit_runs_max_epochs_and_reduces_loss() {
        let ds = tiny_dataset();
        let model = init_embeddings(BackboneKind::Mf, 5, 12, 4, 0, 1, 0.1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            l2_coeff: 0.0,
            batch_size: 8,
            max_epochs: 3,
            patience: 100,
            seed: 4,
            eval_n: 5,
        };
        let out = fit(model, &ds, None, &cfg, Objective::Base).unwrap();
        assert_eq!(out.log.records.len(), 3);
        let first = out.log.records[0].train_loss;
        let cfg = TrainConfig {
            max_epochs: 30,
            ..cfg
        };
        let model = init_embeddings(BackboneKind::Mf, 5, 12, 4, 0, 1, 0.1).unwrap();
        let out = fit(model, &ds, None, &cfg, Objective::Base).unwrap();
        assert!(out.log.records.last().unwrap().train_loss < first);
        let best = out
            .log
            .records
            .iter()
            .map(|r| r.valid_ndcg)
            .fold(f64::MIN, f64::max);
        assert_eq!(out.best_valid_ndcg, best);
    }

    #[test]
    fn fit_requires_validation() {
        let log =
            InteractionLog::from_pairs(2, 6, &[(0, 0), (0, 1), (0, 2), (1, 3), (1, 4), (1, 5)])
                .unwrap();
        let ds = split_per_user(&log, 0.3, 0.0, 1).unwrap();
        let model = init_embeddings(BackboneKind::Mf, 2, 6, 2, 0, 1, 0.1).unwrap();
        assert!(fit(model, &ds, None, &TrainConfig::default(), Objective::Base).is_err());
    }
}
