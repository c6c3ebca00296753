use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BayesModel, Dataset, GaussianLocation, GaussianPosterior};
use crate::rng::{self, Rng};

/// Augmented Gibbs sampler for the Gaussian location model with a normal
/// coupling kernel `κ_ρ(z_k, θ) = N(z_k; θ, ρ I)` per shard.
#[derive(Debug, Clone, PartialEq)]
pub struct AxdaConfig {
    pub rho: f64,
    pub iters: usize,
    pub seed: u64,
    /// Order in which the shard variables are refreshed; ascending by default.
    pub update_order: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxdaChain {
    /// `θ` after every sweep.
    pub theta: Vec<Vec<f64>>,
    /// Shard variables `z_k` after the final sweep.
    pub z: Vec<Vec<f64>>,
}

struct ShardStats {
    size: f64,
    sum: Vec<f64>,
}

fn shard_stats(model: &GaussianLocation, shards: &[Dataset]) -> Result<Vec<ShardStats>> {
    if shards.is_empty() {
        return Err(Error::input("AXDA needs at least one shard"));
    }
    let d = model.dim();
    shards
        .iter()
        .map(|s| {
            if s.obs_dim() != d {
                return Err(Error::input(format!("shard rows have dimension {}, model has {d}", s.obs_dim())));
            }
            let mut sum = vec![0.0; d];
            for row in s.rows() {
                for (a, b) in sum.iter_mut().zip(row) {
                    *a += b;
                }
            }
            Ok(ShardStats {
                size: s.n_obs() as f64,
                sum,
            })
        })
        .collect()
}

/// Alternates parallel draws of `z_k | θ, Y_k` with a draw of `θ | z`.
///
/// Worker `k` owns random stream `k + 1` and `θ` owns stream 0, so the
/// chain does not depend on the order in which workers update.
pub fn axda_gibbs(model: &GaussianLocation, shards: &[Dataset], cfg: &AxdaConfig) -> Result<AxdaChain> {
    if !(cfg.rho > 0.0 && cfg.rho.is_finite()) {
        return Err(Error::input(format!("AXDA tolerance ρ must be positive, got {}", cfg.rho)));
    }
    let stats = shard_stats(model, shards)?;
    let k = stats.len();
    let order: Vec<usize> = match &cfg.update_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..k).collect::<Vec<_>>() {
                return Err(Error::input("update order must be a permutation of the shard indices"));
            }
            o.clone()
        }
        None => (0..k).collect(),
    };
    let d = model.dim();
    let inv_rho = 1.0 / cfg.rho;
    let mut theta_rng = rng::stream(cfg.seed, 0);
    let mut worker_rngs: Vec<Rng> = (0..k).map(|j| rng::stream(cfg.seed, j as u64 + 1)).collect();
    let mut theta = vec![0.0; d];
    let mut z = vec![vec![0.0; d]; k];
    let theta_prec = 1.0 + k as f64 * inv_rho;
    let mut chain = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let mut slots: Vec<(usize, &mut Rng, &mut Vec<f64>)> = worker_rngs
            .iter_mut()
            .zip(z.iter_mut())
            .enumerate()
            .map(|(j, (r, zj))| (j, r, zj))
            .collect();
        slots.sort_by_key(|(j, _, _)| order.iter().position(|o| o == j));
        slots.par_iter_mut().for_each(|(j, r, zj)| {
            let s = &stats[*j];
            let prec = s.size + inv_rho;
            let sd = prec.sqrt().recip();
            for i in 0..d {
                zj[i] = (s.sum[i] + theta[i] * inv_rho) / prec + sd * rng::normal(r);
            }
        });
        let sd = theta_prec.sqrt().recip();
        for i in 0..d {
            let zsum: f64 = z.iter().map(|zj| zj[i]).sum();
            theta[i] = zsum * inv_rho / theta_prec + sd * rng::normal(&mut theta_rng);
        }
        chain.push(theta.clone());
    }
    Ok(AxdaChain { theta: chain, z })
}

/// Exact `θ`-marginal of the augmented model: each shard mean `ȳ_k`
/// contributes a Gaussian factor with variance `1/M_k + ρ`.
pub fn axda_theta_marginal(model: &GaussianLocation, shards: &[Dataset], rho: f64) -> Result<GaussianPosterior> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::input(format!("AXDA tolerance ρ must be non-negative, got {rho}")));
    }
    let stats = shard_stats(model, shards)?;
    let d = model.dim();
    let mut prec = 1.0;
    let mut shift = vec![0.0; d];
    for s in &stats {
        let v = 1.0 / s.size + rho;
        prec += 1.0 / v;
        for i in 0..d {
            shift[i] += s.sum[i] / s.size / v;
        }
    }
    GaussianPosterior::new(
        DVector::from_iterator(d, shift.iter().map(|s| s / prec)),
        DMatrix::identity(d, d) / prec,
    )
}
