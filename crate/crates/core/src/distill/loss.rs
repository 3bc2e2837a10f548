use super::plan::{rank_sampling_weights, UserPairs, UserTargets};
use crate::backbone::Embeddings;
use crate::error::{Error, Result};
use crate::real::{log_sigmoid, sigmoid, Real};
use crate::trainer::{bpr_loss_and_grad, Triple};

fn axpy<T: Real>(alpha: f64, x: &[T], y: &mut [T]) {
    let a = T::of(alpha);
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Group-wise pairwise distillation loss
/// `L_G = -(1/|U|) Σ_u Σ_(i⁺,i⁻) ln σ(e_uᵀe_i⁺ - e_uᵀe_i⁻)`, where `|U|` is the
/// number of user entries in `batch`.
///
/// Adds `scale · ∇L_G` into `grad` and returns the unscaled `L_G`.
pub fn group_distill_loss_and_grad<T: Real>(
    emb: &Embeddings<T>,
    batch: &[UserPairs],
    scale: f64,
    grad: &mut Embeddings<T>,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    pairwise_loss(emb, batch, 1.0 / batch.len() as f64, scale, grad)
}

/// The same pairwise loss averaged over pairs instead of users, which puts
/// it on the per-triple scale of the BPR term.
pub fn pair_mean_distill_loss_and_grad<T: Real>(
    emb: &Embeddings<T>,
    batch: &[UserPairs],
    scale: f64,
    grad: &mut Embeddings<T>,
) -> Result<f64> {
    let pairs: usize = batch.iter().map(|u| u.pairs.len()).sum();
    if pairs == 0 {
        return Ok(0.0);
    }
    pairwise_loss(emb, batch, 1.0 / pairs as f64, scale, grad)
}

fn pairwise_loss<T: Real>(
    emb: &Embeddings<T>,
    batch: &[UserPairs],
    norm: f64,
    scale: f64,
    grad: &mut Embeddings<T>,
) -> Result<f64> {
    let d = emb.dim;
    let mut loss = 0.0;
    let mut gu = vec![T::zero(); d];
    for entry in batch {
        let u = entry.user as usize;
        let eu = emb.user(u);
        gu.iter_mut().for_each(|g| *g = T::zero());
        for &(pos, neg) in &entry.pairs {
            let (pos, neg) = (pos as usize, neg as usize);
            let x = emb.score(u, pos).as_f64() - emb.score(u, neg).as_f64();
            loss -= log_sigmoid(x);
            // d(-ln σ(x))/dx = -σ(-x)
            let coeff = -sigmoid(-x) * norm * scale;
            let (ep, en) = (emb.item(pos), emb.item(neg));
            for k in 0..d {
                gu[k] += T::of(coeff) * (ep[k] - en[k]);
            }
            axpy(coeff, eu, grad.item_mut(pos));
            axpy(-coeff, eu, grad.item_mut(neg));
        }
        for (g, &v) in grad.user_mut(u).iter_mut().zip(&gu) {
            *g += v;
        }
    }
    let loss = loss * norm;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("group distillation"));
    }
    Ok(loss)
}

/// Position-weighted pointwise loss
/// `-(1/|U|) Σ_u Σ_k w_k ln σ(e_uᵀe_(item_k))` over each user's teacher top
/// items, with `w` the rank weights `∝ exp(-k/μ)` over the list length.
pub fn rd_loss_and_grad<T: Real>(
    emb: &Embeddings<T>,
    batch: &[UserTargets],
    mu: f64,
    scale: f64,
    grad: &mut Embeddings<T>,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let norm = 1.0 / batch.len() as f64;
    let d = emb.dim;
    let mut loss = 0.0;
    let mut gu = vec![T::zero(); d];
    for entry in batch {
        let u = entry.user as usize;
        if entry.items.is_empty() {
            continue;
        }
        let w = rank_sampling_weights(entry.items.len(), mu);
        let eu = emb.user(u);
        gu.iter_mut().for_each(|g| *g = T::zero());
        for (&item, wk) in entry.items.iter().zip(w) {
            let item = item as usize;
            let s = emb.score(u, item).as_f64();
            loss -= wk * log_sigmoid(s);
            let coeff = -wk * sigmoid(-s) * norm * scale;
            axpy(coeff, emb.item(item), &mut gu);
            axpy(coeff, eu, grad.item_mut(item));
        }
        for (g, &v) in grad.user_mut(u).iter_mut().zip(&gu) {
            *g += v;
        }
    }
    let loss = loss * norm;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("rd distillation"));
    }
    Ok(loss)
}

/// Distillation terms of one mini-batch.
#[derive(Debug, Clone, Copy)]
pub enum DistillBatch<'a> {
    None,
    /// Pairwise terms normalized per user entry.
    Pairs(&'a [UserPairs]),
    /// Pairwise terms normalized per pair.
    PairMean(&'a [UserPairs]),
    Pointwise {
        targets: &'a [UserTargets],
        mu: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub base: f64,
    pub distill: f64,
}

/// `L = L_R + λ·L_D`, gradients accumulated into `grad`.
///
/// `L_R` is BPR on `triples` with L2 on the embeddings it touches; `L_D` is
/// whichever distillation term `distill` carries.
pub fn combined_objective<T: Real>(
    emb: &Embeddings<T>,
    triples: &[Triple],
    l2_coeff: f64,
    distill: DistillBatch<'_>,
    lambda: f64,
    grad: &mut Embeddings<T>,
) -> Result<ObjectiveValue> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let base = bpr_loss_and_grad(emb, triples, l2_coeff, 1.0, grad)?;
    let distill = match distill {
        DistillBatch::None => 0.0,
        DistillBatch::Pairs(p) => group_distill_loss_and_grad(emb, p, lambda, grad)?,
        DistillBatch::PairMean(p) => pair_mean_distill_loss_and_grad(emb, p, lambda, grad)?,
        DistillBatch::Pointwise { targets, mu } => {
            rd_loss_and_grad(emb, targets, mu, lambda, grad)?
        }
    };
    Ok(ObjectiveValue {
        total: base + lambda * distill,
        base,
        distill,
    })
}
