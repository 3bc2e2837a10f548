//! Seeded synthetic implicit-feedback logs with a long-tailed item popularity.
//!
//! Each item gets a latent vector and a propensity `∝ rank^-exponent` over a
//! random item order; each user gets a latent vector and draws a fixed number
//! of distinct items with probability `∝ propensity · exp(sharpness · ⟨u, v⟩)`
//! (Gumbel top-k, so draws are without replacement).

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::InteractionLog;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub latent_dim: usize,
    pub popularity_exponent: f64,
    pub sharpness: f64,
    pub min_per_user: usize,
    pub max_per_user: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 600,
            items: 400,
            latent_dim: 16,
            popularity_exponent: 0.9,
            sharpness: 2.0,
            min_per_user: 20,
            max_per_user: 60,
        }
    }
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<InteractionLog> {
    if spec.users == 0 || spec.items == 0 || spec.latent_dim == 0 {
        return Err(Error::InvalidArgument(
            "synthetic sizes must be positive".into(),
        ));
    }
    if spec.min_per_user == 0
        || spec.min_per_user > spec.max_per_user
        || spec.max_per_user > spec.items
    {
        return Err(Error::InvalidArgument(format!(
            "per-user range [{}, {}] invalid for {} items",
            spec.min_per_user, spec.max_per_user, spec.items
        )));
    }
    let mut rng = rng::stream(seed, Purpose::Synthetic, 0, 0);
    let scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let latent = |count: usize, rng: &mut rng::Rng| -> Vec<f64> {
        (0..count * spec.latent_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect()
    };
    let item_vecs = latent(spec.items, &mut rng);
    let user_vecs = latent(spec.users, &mut rng);
    let mut order: Vec<usize> = (0..spec.items).collect();
    order.shuffle(&mut rng);
    let mut log_prop = vec![0.0; spec.items];
    for (rank, &i) in order.iter().enumerate() {
        log_prop[i] = -spec.popularity_exponent * ((rank + 1) as f64).ln();
    }

    let d = spec.latent_dim;
    let mut pairs = Vec::new();
    for u in 0..spec.users {
        let mut urng = rng::stream(seed, Purpose::Synthetic, 1, u as u64);
        let count = urng.random_range(spec.min_per_user..=spec.max_per_user);
        let uv = &user_vecs[u * d..(u + 1) * d];
        let mut keyed: Vec<(f64, u32)> = (0..spec.items)
            .map(|i| {
                let affinity: f64 = uv
                    .iter()
                    .zip(&item_vecs[i * d..(i + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                let g: f64 = urng.random::<f64>().max(f64::MIN_POSITIVE);
                let gumbel = -(-g.ln()).ln();
                (
                    log_prop[i] + spec.sharpness * affinity * (d as f64).sqrt() + gumbel,
                    i as u32,
                )
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        pairs.extend(keyed[..count].iter().map(|&(_, i)| (u as u32, i)));
    }
    InteractionLog::from_pairs(spec.users, spec.items, &pairs)
}
