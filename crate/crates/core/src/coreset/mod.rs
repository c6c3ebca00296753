//! Bayesian coresets: sparse non-negative reweightings `w` of the data
//! potentials, defining `π_w(θ) ∝ π0(θ) exp(Σ_n w_n f_n(θ))`.

mod nnls;

pub use nnls::nnls;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mcmc::{sample_tuned, HmcSampling};
use crate::model::{conjugate_posterior, conjugate_posterior_weighted, BayesModel, WeightedPotential};
use crate::util::{covariance, dot};

/// Non-negative weights over the `N` data; the support is the nonzero set.
#[derive(Debug, Clone, PartialEq)]
pub struct CoresetWeights {
    w: Vec<f64>,
}

impl CoresetWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::input("coreset weights are empty"));
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input(format!("weight {i} is {} (must be finite and non-negative)", w[i])));
        }
        Ok(CoresetWeights { w })
    }

    pub fn ones(n: usize) -> Self {
        CoresetWeights { w: vec![1.0; n] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.w
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&i| self.w[i] != 0.0).collect()
    }

    pub fn size(&self) -> usize {
        self.w.iter().filter(|v| **v != 0.0).count()
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// `M` distinct data chosen uniformly at random, each weighted `N/M`.
pub fn uniform_coreset(model: &dyn BayesModel, m: usize, seed: u64) -> Result<CoresetWeights> {
    let n = model.n_data();
    if m == 0 || m > n {
        return Err(Error::input(format!("coreset size must lie in 1..={n}, got {m}")));
    }
    let mut rng = crate::rng::seeded(seed);
    let mut w = vec![0.0; n];
    let weight = n as f64 / m as f64;
    for i in index::sample(&mut rng, n, m) {
        w[i] = weight;
    }
    CoresetWeights::new(w)
}

/// `S × N` matrix of `f_n(θ_s)`.
pub fn potential_matrix(model: &dyn BayesModel, draws: &[Vec<f64>]) -> DMatrix<f64> {
    let n = model.n_data();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| draws.iter().map(|th| model.datum_loglik(th, j)).collect())
        .collect();
    DMatrix::from_fn(draws.len(), n, |s, j| cols[j][s])
}

fn center_columns(mut phi: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in phi.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    phi
}

#[derive(Debug, Clone)]
pub struct SparseFit {
    pub weights: CoresetWeights,
    /// `‖g − Φw‖₂` at the returned weights.
    pub residual: f64,
}

/// Greedy sparse regression of the full potential onto at most `m` data.
///
/// Column `n` of `Φ` holds `f_n` at the reference draws, centred over draws,
/// and `g = Σ_n Φ_n`. Each round adds the datum whose column best aligns
/// with the current residual and refits all active weights by NNLS.
pub fn sparse_regression_coreset(model: &dyn BayesModel, m: usize, ref_draws: &[Vec<f64>]) -> Result<SparseFit> {
    let n = model.n_data();
    if ref_draws.len() < 2 {
        return Err(Error::input("sparse regression needs at least two reference draws"));
    }
    if m == 0 || m > n {
        return Err(Error::input(format!("coreset size must lie in 1..={n}, got {m}")));
    }
    let phi = center_columns(potential_matrix(model, ref_draws));
    let g: DVector<f64> = phi.column_sum();
    let g_norm = g.norm();
    let col_norms: Vec<f64> = phi.column_iter().map(|c| c.norm()).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut w = DVector::zeros(0);
    let mut residual = g.clone();
    while active.len() < m && residual.norm() > 1e-14 * g_norm.max(1.0) {
        let corr = phi.transpose() * &residual;
        let next = (0..n)
            .filter(|j| !active.contains(j) && col_norms[*j] > 0.0)
            .map(|j| (j, corr[j] / col_norms[j]))
            .filter(|(_, c)| *c > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((j, _)) = next else { break };
        active.push(j);
        let sub = phi.select_columns(&active);
        let fit = nnls(&sub, &g)?;
        residual = &g - &sub * &fit;
        w = fit;
    }
    let mut dense = vec![0.0; n];
    for (k, &j) in active.iter().enumerate() {
        dense[j] = w[k];
    }
    Ok(SparseFit {
        weights: CoresetWeights::new(dense)?,
        residual: residual.norm(),
    })
}

/// Monte Carlo gradient of `KL(π_w ‖ π)` in `w` from draws of `π_w`:
/// entry `n` is `−Cov[f_n, Σ_i (1 − w_i) f_i]` with the `1/(S−1)` sample
/// covariance.
pub fn kl_weight_grad(model: &dyn BayesModel, w: &[f64], draws: &[Vec<f64>]) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..model.n_data()).collect();
    kl_weight_grad_on(model, w, draws, &all)
}

/// [`kl_weight_grad`] evaluated only at the entries in `indices`.
pub fn kl_weight_grad_on(model: &dyn BayesModel, w: &[f64], draws: &[Vec<f64>], indices: &[usize]) -> Result<Vec<f64>> {
    if draws.len() < 2 {
        return Err(Error::input("the KL gradient needs at least two draws"));
    }
    if w.len() != model.n_data() {
        return Err(Error::input(format!("{} weights for {} data", w.len(), model.n_data())));
    }
    let gap: Vec<(usize, f64)> = (0..w.len()).map(|i| (i, 1.0 - w[i])).filter(|(_, c)| *c != 0.0).collect();
    let resid: Vec<f64> = draws
        .par_iter()
        .map(|th| gap.iter().map(|&(i, c)| c * model.datum_loglik(th, i)).sum())
        .collect();
    Ok(indices
        .par_iter()
        .map(|&n| {
            let f: Vec<f64> = draws.iter().map(|th| model.datum_loglik(th, n)).collect();
            -covariance(&f, &resid)
        })
        .collect())
}

/// Closed-form `KL(π_w ‖ π)` for conjugate Gaussian models.
pub fn exact_gaussian_coreset_kl(model: &dyn BayesModel, w: &[f64]) -> Result<f64> {
    let approx = conjugate_posterior_weighted(model, w, 1.0)?;
    let full = conjugate_posterior(model)?;
    Ok(approx.kl_to(&full))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Projected gradient steps with a `step/√(t+1)` schedule.
    FirstOrder,
    /// Projected steps scaled by a Barzilai–Borwein curvature estimate.
    QuasiNewton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetBuildConfig {
    pub budget: usize,
    /// Draws from `π_w` per gradient estimate.
    pub n_draws: usize,
    pub n_opt_steps: usize,
    pub step_size: f64,
    pub optimizer: Optimizer,
    pub n_leapfrog: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for CoresetBuildConfig {
    fn default() -> Self {
        CoresetBuildConfig {
            budget: 10,
            n_draws: 1000,
            n_opt_steps: 50,
            step_size: 1.0,
            optimizer: Optimizer::QuasiNewton,
            n_leapfrog: 10,
            burn_in: 200,
            seed: 0,
        }
    }
}

impl CoresetBuildConfig {
    fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.n_draws < 2 || self.n_leapfrog == 0 {
            return Err(Error::input("coreset budget, draw count and leapfrog count must be positive (at least two draws)"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::input("coreset step size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub weights: CoresetWeights,
    /// Closed-form `KL(π_w ‖ π)` after every step, for conjugate models.
    pub kl_trace: Vec<f64>,
    /// Norm of the support-restricted gradient at every step.
    pub grad_norm_trace: Vec<f64>,
}

/// Optimises the weights on the support of `init` by projected stochastic
/// steps on `KL(π_w ‖ π)`, drawing fresh HMC samples from `π_w` at every step.
pub fn optimize_weights(
    model: &dyn BayesModel,
    init: &CoresetWeights,
    cfg: &CoresetBuildConfig,
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    if init.n() != model.n_data() {
        return Err(Error::input(format!("{} weights for {} data", init.n(), model.n_data())));
    }
    let support = init.support();
    if support.len() > cfg.budget {
        return Err(Error::input(format!(
            "initial support has {} points, budget is {}",
            support.len(),
            cfg.budget
        )));
    }
    let mut w = init.weights().to_vec();
    let mut kl_trace = Vec::new();
    let mut grad_norm_trace = Vec::new();
    let mut start = vec![0.0; model.dim()];
    let mut eps = 0.1;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut bb = cfg.step_size;
    for t in 0..cfg.n_opt_steps {
        let target = WeightedPotential::weighted(model, &w)?;
        let sampling = HmcSampling {
            init_eps: eps,
            n_leapfrog: cfg.n_leapfrog,
            burn_in: cfg.burn_in,
            n_draws: cfg.n_draws,
        };
        let sample = sample_tuned(&target, start.clone(), &sampling, cfg.seed, t as u64)
            .map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("inner sampler at step {t}: {m}")),
                other => other,
            })?;
        eps = sample.eps;
        start = sample.draws.last().cloned().unwrap_or(start);
        let g = kl_weight_grad_on(model, &w, &sample.draws, &support)?;
        grad_norm_trace.push(dot(&g, &g).sqrt());
        let ws: Vec<f64> = support.iter().map(|&i| w[i]).collect();
        let step = match cfg.optimizer {
            Optimizer::FirstOrder => cfg.step_size / ((t + 1) as f64).sqrt(),
            Optimizer::QuasiNewton => {
                if let Some((pw, pg)) = &prev {
                    let s: Vec<f64> = ws.iter().zip(pw).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 0.0 {
                        bb = (dot(&s, &s) / sy).clamp(1e-2 * cfg.step_size, 1e2 * cfg.step_size);
                    }
                }
                bb
            }
        };
        prev = Some((ws.clone(), g.clone()));
        for (k, &i) in support.iter().enumerate() {
            w[i] = (ws[k] - step * g[k]).max(0.0);
        }
        if model.conjugate().is_some() {
            kl_trace.push(exact_gaussian_coreset_kl(model, &w)?);
        }
    }
    Ok(OptimizeOutcome {
        weights: CoresetWeights::new(w)?,
        kl_trace,
        grad_norm_trace,
    })
}
