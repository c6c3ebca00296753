//! Divide-and-conquer posterior inference with simulated workers.
//!
//! Data are split into `K` equal shards; each worker sees only its own shard
//! and its own random stream, and results are merged by index so the outcome
//! never depends on scheduling.

mod axda;
mod combine;
mod sgld;
mod tv;

pub use axda::{axda_gibbs, axda_theta_marginal, AxdaChain, AxdaConfig};
pub use combine::{
    consensus_gaussian, consensus_weights, quantile_average, recentered_mixture, wasserstein_median, MedianFit,
    RecenteredMixture,
};
pub use sgld::{dsgld_gradient, dsgld_run, sgld_gradient, sgld_run, DsgldConfig, DsgldRun, SgldConfig, StepSchedule};
pub use tv::{gaussian_tv, tv_bound_check, TvReport};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{sample_tuned, HmcSampling};
use crate::model::{BayesModel, Dataset, WeightedPotential};

/// How a shard posterior is calibrated against the full posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// `π0^{1/K} × shard likelihood`; the product over shards is the posterior.
    TemperedPrior,
    /// `π0 × (shard likelihood)^K`; each shard posterior has full-data spread.
    PoweredLikelihood,
}

impl SubsetMode {
    /// `(likelihood power, prior power)` for `k` shards.
    pub fn powers(self, k: usize) -> (f64, f64) {
        match self {
            SubsetMode::TemperedPrior => (1.0, 1.0 / k as f64),
            SubsetMode::PoweredLikelihood => (k as f64, 1.0),
        }
    }
}

/// Potential of one shard posterior.
pub fn subset_potential<M: BayesModel + ?Sized>(shard_model: &M, mode: SubsetMode, k: usize) -> WeightedPotential<'_, M> {
    let (lik, prior) = mode.powers(k);
    WeightedPotential::uniform(shard_model, lik, prior)
}

/// Natural parameters `(Λ_j, η_j)` of a conjugate shard posterior.
pub fn subset_natural(shard_model: &dyn BayesModel, mode: SubsetMode, k: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let c = shard_model
        .conjugate()
        .ok_or_else(|| Error::unsupported("natural parameters require a conjugate Gaussian model"))?;
    let (lik, prior) = mode.powers(k);
    Ok(c.natural(&vec![lik; shard_model.n_data()], prior))
}

/// What each simulated worker touched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerAudit {
    /// Number of random streams initialised across all workers.
    pub seed_inits: usize,
    /// Shard tags of the datasets each worker read.
    pub shards_read: Vec<Vec<Option<usize>>>,
}

impl WorkerAudit {
    /// Reads by worker `j` of any shard other than `j`.
    pub fn cross_shard_reads(&self) -> usize {
        self.shards_read
            .iter()
            .enumerate()
            .map(|(j, reads)| reads.iter().filter(|s| **s != Some(j)).count())
            .sum()
    }
}

/// Per-shard posterior draws, `draws[j][t]` in `R^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerDraws {
    pub draws: Vec<Vec<Vec<f64>>>,
    pub seeds: Vec<u64>,
    pub mode: SubsetMode,
    pub audit: WorkerAudit,
}

impl WorkerDraws {
    pub fn new(draws: Vec<Vec<Vec<f64>>>, seeds: Vec<u64>, mode: SubsetMode) -> Result<Self> {
        validate_draws(&draws)?;
        Ok(WorkerDraws {
            draws,
            seeds,
            mode,
            audit: WorkerAudit::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.draws.len()
    }

    pub fn t(&self) -> usize {
        self.draws[0].len()
    }

    pub fn dim(&self) -> usize {
        self.draws[0][0].len()
    }
}

pub(crate) fn validate_draws(draws: &[Vec<Vec<f64>>]) -> Result<()> {
    if draws.is_empty() || draws[0].is_empty() {
        return Err(Error::input("worker draws are empty"));
    }
    let t = draws[0].len();
    let p = draws[0][0].len();
    if draws.iter().any(|d| d.len() != t) {
        return Err(Error::input("workers returned different numbers of draws"));
    }
    if draws.iter().flatten().any(|x| x.len() != p || !x.iter().all(|v| v.is_finite())) {
        return Err(Error::input("worker draws must be finite and share one dimension"));
    }
    Ok(())
}

/// Runs one tuned HMC chain per shard, in parallel, with no communication.
pub fn run_subset_chains<M: BayesModel + Sized>(
    model: &M,
    shards: &[Dataset],
    mode: SubsetMode,
    sampling: &HmcSampling,
    seeds: &[u64],
) -> Result<WorkerDraws> {
    let k = shards.len();
    if k == 0 {
        return Err(Error::input("no shards to sample"));
    }
    if seeds.len() != k {
        return Err(Error::input(format!("{} seeds for {k} shards", seeds.len())));
    }
    let results: Vec<Result<(Vec<Vec<f64>>, Option<usize>)>> = shards
        .par_iter()
        .zip(seeds)
        .enumerate()
        .map(|(j, (shard, &seed))| {
            let sub = model.with_dataset(shard.clone())?;
            let target = subset_potential(&sub, mode, k);
            let out = sample_tuned(&target, vec![0.0; model.dim()], sampling, seed, 0).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("subset {j}: {m}")),
                other => other,
            })?;
            Ok((out.draws, sub.dataset().shard()))
        })
        .collect();
    let mut draws = Vec::with_capacity(k);
    let mut audit = WorkerAudit {
        seed_inits: 0,
        shards_read: Vec::with_capacity(k),
    };
    for r in results {
        let (d, tag) = r?;
        draws.push(d);
        audit.seed_inits += 1;
        audit.shards_read.push(vec![tag]);
    }
    validate_draws(&draws)?;
    Ok(WorkerDraws {
        draws,
        seeds: seeds.to_vec(),
        mode,
        audit,
    })
}
