use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BayesModel, Dataset};
use crate::rng::{self, Rng};
use crate::util::all_finite;

/// Step sizes `h_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `h_t = a (b + t)^{-γ}` with `γ ∈ (0.5, 1]`, so `Σh = ∞` and `Σh² < ∞`.
    Decreasing { a: f64, b: f64, gamma: f64 },
    /// Fixed `h`, e.g. of order `1/N`.
    Constant { h: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Decreasing { a, b, gamma } => {
                if !(a > 0.0 && b >= 0.0 && gamma > 0.5 && gamma <= 1.0) {
                    return Err(Error::input(format!(
                        "decreasing schedule needs a > 0, b ≥ 0 and γ in (0.5, 1]; got a={a}, b={b}, γ={gamma}"
                    )));
                }
                if b == 0.0 {
                    return Err(Error::input("decreasing schedule needs b > 0 so that h_0 is finite"));
                }
            }
            StepSchedule::Constant { h } => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::input(format!("constant step must be positive, got {h}")));
                }
            }
        }
        Ok(())
    }

    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Decreasing { a, b, gamma } => a * (b + t as f64).powf(-gamma),
            StepSchedule::Constant { h } => h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgldConfig {
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub steps: usize,
}

/// `∇log π0(θ) + (N/n) Σ_{i∈S} ∇f_i(θ)` over a minibatch `S` of size `n`
/// drawn without replacement.
pub fn sgld_gradient(model: &dyn BayesModel, theta: &[f64], batch_size: usize, rng: &mut Rng) -> Vec<f64> {
    minibatch_gradient(model, theta, batch_size, model.n_data() as f64 / batch_size as f64, rng)
}

fn minibatch_gradient(model: &dyn BayesModel, theta: &[f64], batch_size: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    let mut g = model.prior_grad(theta);
    for i in index::sample(rng, model.n_data(), batch_size) {
        model.add_datum_grad(theta, i, scale, &mut g);
    }
    g
}

fn langevin_step(theta: &mut [f64], grad: &[f64], h: f64, rng: &mut Rng) {
    let sd = h.sqrt();
    for (x, g) in theta.iter_mut().zip(grad) {
        *x += 0.5 * h * g + sd * rng::normal(rng);
    }
}

fn check_start(model: &dyn BayesModel, init: &[f64]) -> Result<()> {
    if init.len() != model.dim() {
        return Err(Error::input(format!(
            "initial point has dimension {}, model has {}",
            init.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// Unadjusted Langevin iterations `θ ← θ + (h_t/2) ĝ(θ) + N(0, h_t I)`.
///
/// Returns the initial point followed by every iterate.
pub fn sgld_run(model: &dyn BayesModel, init: &[f64], cfg: &SgldConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    cfg.schedule.validate()?;
    check_start(model, init)?;
    if cfg.batch_size == 0 || cfg.batch_size > model.n_data() {
        return Err(Error::input(format!(
            "minibatch size must lie in 1..={}, got {}",
            model.n_data(),
            cfg.batch_size
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut theta = init.to_vec();
    let mut chain = Vec::with_capacity(cfg.steps + 1);
    chain.push(theta.clone());
    for t in 0..cfg.steps {
        let g = sgld_gradient(model, &theta, cfg.batch_size, &mut rng);
        langevin_step(&mut theta, &g, cfg.schedule.at(t), &mut rng);
        if !all_finite(&theta) {
            return Err(Error::Divergence(format!("SGLD iterate became non-finite at step {t}")));
        }
        chain.push(theta.clone());
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsgldConfig {
    /// Probability of visiting each shard.
    pub p: Vec<f64>,
    pub batch_size: usize,
    /// Consecutive steps spent on one shard.
    pub block_len: usize,
    pub schedule: StepSchedule,
    pub steps: usize,
}

impl DsgldConfig {
    fn validate(&self, shard_sizes: &[usize]) -> Result<()> {
        self.schedule.validate()?;
        if self.p.len() != shard_sizes.len() {
            return Err(Error::input(format!(
                "{} visit probabilities for {} shards",
                self.p.len(),
                shard_sizes.len()
            )));
        }
        if self.p.iter().any(|p| !(*p > 0.0)) || (self.p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::input("visit probabilities must be positive and sum to one"));
        }
        if self.block_len == 0 {
            return Err(Error::input("block length must be positive"));
        }
        if self.batch_size == 0 || shard_sizes.iter().any(|&m| self.batch_size > m) {
            return Err(Error::input("minibatch size must be positive and at most the shard size"));
        }
        Ok(())
    }
}

/// `∇log π0(θ) + (M / (p_j m)) Σ_{i∈S} ∇f_i(θ)` over a size-`m` minibatch of
/// shard `j` (size `M`), visited with probability `p_j`.
pub fn dsgld_gradient(shard_model: &dyn BayesModel, p_j: f64, theta: &[f64], batch_size: usize, rng: &mut Rng) -> Vec<f64> {
    let scale = shard_model.n_data() as f64 / (p_j * batch_size as f64);
    minibatch_gradient(shard_model, theta, batch_size, scale, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsgldRun {
    /// Initial point followed by every iterate.
    pub chain: Vec<Vec<f64>>,
    /// Shard visited in each block.
    pub visits: Vec<usize>,
    /// Hand-offs of the chain state between workers (completed blocks).
    pub communications: usize,
}

/// Distributed SGLD: every `block_len` steps the chain moves to a shard drawn
/// from `Categorical(p)` and continues with that shard's minibatch gradients.
pub fn dsgld_run<M: BayesModel + Sized>(
    model: &M,
    shards: &[Dataset],
    init: &[f64],
    cfg: &DsgldConfig,
    seed: u64,
) -> Result<DsgldRun> {
    check_start(model, init)?;
    let sizes: Vec<usize> = shards.iter().map(Dataset::n_obs).collect();
    cfg.validate(&sizes)?;
    let workers: Vec<M> = shards.iter().map(|s| model.with_dataset(s.clone())).collect::<Result<_>>()?;
    let chooser = WeightedIndex::new(&cfg.p).map_err(|e| Error::input(format!("visit probabilities: {e}")))?;
    let mut rng = rng::seeded(seed);
    let mut theta = init.to_vec();
    let mut chain = Vec::with_capacity(cfg.steps + 1);
    chain.push(theta.clone());
    let mut visits = Vec::new();
    let mut j = 0;
    for t in 0..cfg.steps {
        if t % cfg.block_len == 0 {
            if workers.len() > 1 {
                j = chooser.sample(&mut rng);
            }
            visits.push(j);
        }
        let g = dsgld_gradient(&workers[j], cfg.p[j], &theta, cfg.batch_size, &mut rng);
        langevin_step(&mut theta, &g, cfg.schedule.at(t), &mut rng);
        if !all_finite(&theta) {
            return Err(Error::Divergence(format!("DSGLD iterate became non-finite at step {t}")));
        }
        chain.push(theta.clone());
    }
    Ok(DsgldRun {
        chain,
        visits,
        communications: cfg.steps / cfg.block_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{partition, GaussianLocation};

    fn model() -> GaussianLocation {
        GaussianLocation::new(1, Dataset::scalar(&[0.5, 1.5, -0.2, 0.9, 2.0, 1.1]).unwrap()).unwrap()
    }

    #[test]
    fn schedules() {
        let s = StepSchedule::Decreasing { a: 1.0, b: 1.0, gamma: 1.0 };
        assert_eq!(s.at(1), 0.5);
        assert!(StepSchedule::Decreasing { a: 1.0, b: 1.0, gamma: 0.5 }.validate().is_err());
        assert!(StepSchedule::Constant { h: 0.0 }.validate().is_err());
    }

    #[test]
    fn zero_steps_return_start() {
        let cfg = SgldConfig {
            batch_size: 2,
            schedule: StepSchedule::Constant { h: 0.01 },
            steps: 0,
        };
        assert_eq!(sgld_run(&model(), &[0.3], &cfg, 1).unwrap(), vec![vec![0.3]]);
    }

    #[test]
    fn single_shard_matches_sgld() {
        let m = model();
        let shards = partition(m.dataset(), 1, 9).unwrap();
        let schedule = StepSchedule::Decreasing { a: 0.1, b: 10.0, gamma: 0.6 };
        let s = sgld_run(&m, &[0.0], &SgldConfig { batch_size: 2, schedule, steps: 50 }, 4).unwrap();
        let cfg = DsgldConfig {
            p: vec![1.0],
            batch_size: 2,
            block_len: 7,
            schedule,
            steps: 50,
        };
        let d = dsgld_run(&m, &shards, &[0.0], &cfg, 4).unwrap();
        assert_eq!(d.chain, s);
        assert_eq!(d.communications, 7);
        assert_eq!(d.visits.len(), 8);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let m = model();
        let shards = partition(m.dataset(), 2, 9).unwrap();
        let cfg = DsgldConfig {
            p: vec![0.5, 0.6],
            batch_size: 2,
            block_len: 5,
            schedule: StepSchedule::Constant { h: 0.01 },
            steps: 10,
        };
        assert!(dsgld_run(&m, &shards, &[0.0], &cfg, 1).is_err());
    }
}
