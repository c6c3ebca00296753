use std::collections::VecDeque;

use rand::Rng as _;
use rayon::prelude::*;

use super::{esjd_loss, forward_kl_loss, run_chain, ChainState, IndependentKernel, Kernel, MixtureKernel, StepRecord};
use crate::error::{Error, Result};
use crate::flow::ComposedFlow;
use crate::model::Target;
use crate::rng::{self, Rng};

/// A kernel with a flat, unconstrained parameter vector.
pub trait Tunable: Kernel + Sized {
    fn tunable_params(&self) -> Vec<f64>;

    fn with_tunable_params(&self, params: &[f64]) -> Result<Self>;
}

/// Adam on a flat parameter vector (minimisation).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub rounds: usize,
    /// Sampler steps per walker between optimizer phases.
    pub steps_per_round: usize,
    pub updates_per_round: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    /// Central finite-difference step for ESJD gradients.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            rounds: 100,
            steps_per_round: 20,
            updates_per_round: 1,
            batch_size: 256,
            buffer_capacity: 4096,
            learning_rate: 0.01,
            fd_step: 1e-4,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.steps_per_round == 0 {
            return Err(Error::input("batch size, buffer capacity and steps per round must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.fd_step > 0.0) {
            return Err(Error::input("learning rate and finite-difference step must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome<K> {
    pub kernel: K,
    /// One chain per walker, concatenated across rounds.
    pub chains: Vec<Vec<StepRecord>>,
    /// Loss after each optimizer update.
    pub loss_trace: Vec<f64>,
}

struct Walkers {
    states: Vec<ChainState>,
    chains: Vec<Vec<StepRecord>>,
    buffer: VecDeque<Vec<f64>>,
    capacity: usize,
}

impl Walkers {
    fn new(target: &dyn Target, init: &[Vec<f64>], cfg: &AdaptConfig) -> Result<Self> {
        if init.is_empty() {
            return Err(Error::input("adaptation needs at least one starting point"));
        }
        let states = init
            .iter()
            .enumerate()
            .map(|(i, x)| ChainState::new(target, x.clone(), cfg.seed, i as u64 + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Walkers {
            chains: vec![Vec::new(); states.len()],
            states,
            buffer: VecDeque::with_capacity(cfg.buffer_capacity),
            capacity: cfg.buffer_capacity,
        })
    }

    fn advance(&mut self, kernel: &dyn Kernel, target: &dyn Target, steps: usize) -> Result<()> {
        let runs: Vec<Vec<StepRecord>> = self
            .states
            .par_iter_mut()
            .map(|s| run_chain(kernel, target, s, steps))
            .collect::<Result<_>>()?;
        // interleave so the window holds recent states of every walker
        for t in 0..steps {
            for run in &runs {
                if self.buffer.len() == self.capacity {
                    self.buffer.pop_front();
                }
                self.buffer.push_back(run[t].x.clone());
            }
        }
        for (chain, run) in self.chains.iter_mut().zip(runs) {
            chain.extend(run);
        }
        Ok(())
    }

    fn minibatch(&self, size: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..size)
            .map(|_| self.buffer[rng.random_range(0..self.buffer.len())].clone())
            .collect()
    }
}

fn abort(round: usize, reason: impl Into<String>, trace: &[f64]) -> Error {
    Error::Adaptation {
        round,
        reason: reason.into(),
        trace: trace.to_vec(),
    }
}

/// Fits a flow to the target by alternating sampling with forward-KL updates.
///
/// Walkers move with `local` interleaved with independent proposals from the
/// current flow (`local_per_global` local steps per flow step), or with flow
/// proposals alone when `local` is `None`.
pub fn adapt_forward_kl(
    flow: ComposedFlow,
    target: &dyn Target,
    local: Option<&dyn Kernel>,
    local_per_global: usize,
    init: &[Vec<f64>],
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome<ComposedFlow>> {
    cfg.validate()?;
    let mut walkers = Walkers::new(target, init, cfg)?;
    let mut opt_rng = rng::stream(cfg.seed, 0);
    let mut params = flow.params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut flow = flow;
    let mut trace = Vec::new();
    for round in 0..cfg.rounds {
        let global = IndependentKernel::new(flow.clone());
        match local {
            Some(l) => {
                let k = MixtureKernel::new(l, global, local_per_global)?;
                walkers.advance(&k, target, cfg.steps_per_round)?;
            }
            None => walkers.advance(&global, target, cfg.steps_per_round)?,
        }
        for _ in 0..cfg.updates_per_round {
            let batch = walkers.minibatch(cfg.batch_size, &mut opt_rng);
            let (value, grad) = forward_kl_loss(&flow, &batch).map_err(|e| abort(round, e.to_string(), &trace))?;
            trace.push(value);
            if !value.is_finite() {
                return Err(abort(round, "non-finite forward-KL loss", &trace));
            }
            adam.step(&mut params, &grad);
            flow.set_params(&params)?;
        }
    }
    Ok(AdaptOutcome {
        kernel: flow,
        chains: walkers.chains,
        loss_trace: trace,
    })
}

/// Tunes a kernel by minimising the ESJD loss `λ/lag − lag/λ`.
///
/// Gradients are central finite differences with common random numbers: all
/// perturbed evaluations in an update share the minibatch and proposal seeds.
pub fn adapt_esjd<K: Tunable>(
    kernel: K,
    target: &dyn Target,
    lambda: f64,
    init: &[Vec<f64>],
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome<K>> {
    cfg.validate()?;
    super::LossSpec::Esjd { lambda }.validate()?;
    let mut walkers = Walkers::new(target, init, cfg)?;
    let mut opt_rng = rng::stream(cfg.seed, 0);
    let mut params = kernel.tunable_params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut kernel = kernel;
    let mut trace = Vec::new();
    for round in 0..cfg.rounds {
        walkers.advance(&kernel, target, cfg.steps_per_round)?;
        for _ in 0..cfg.updates_per_round {
            let batch = walkers.minibatch(cfg.batch_size, &mut opt_rng);
            let crn: u64 = opt_rng.random();
            let loss = |p: &[f64]| -> f64 {
                kernel
                    .with_tunable_params(p)
                    .and_then(|k| esjd_loss(&k, target, &batch, lambda, crn))
                    .map(|e| e.value)
                    .unwrap_or(f64::INFINITY)
            };
            let value = loss(&params);
            trace.push(value);
            if !value.is_finite() {
                return Err(abort(round, "non-finite ESJD loss", &trace));
            }
            let h = cfg.fd_step;
            let grad: Vec<f64> = (0..params.len())
                .into_par_iter()
                .map(|j| {
                    let mut p = params.clone();
                    p[j] += h;
                    let hi = loss(&p);
                    p[j] -= 2.0 * h;
                    let lo = loss(&p);
                    let g = (hi - lo) / (2.0 * h);
                    if g.is_finite() {
                        g
                    } else {
                        0.0
                    }
                })
                .collect();
            adam.step(&mut params, &grad);
            kernel = kernel.with_tunable_params(&params)?;
        }
    }
    Ok(AdaptOutcome {
        kernel,
        chains: walkers.chains,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::HmcKernel;
    use crate::model::GaussianMixture;

    #[test]
    fn adam_moves_against_gradient() {
        let mut a = Adam::new(2, 0.1);
        let mut p = vec![1.0, -1.0];
        a.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_rounds_leave_kernel_unchanged() {
        let t = GaussianMixture::standard_normal(1);
        let cfg = AdaptConfig {
            rounds: 0,
            ..AdaptConfig::default()
        };
        let k = HmcKernel::new(0.3, 2).unwrap();
        let out = adapt_esjd(k, &t, 1.0, &[vec![0.0]], &cfg).unwrap();
        assert_eq!(out.kernel, k);
        assert!(out.loss_trace.is_empty());
        let f = ComposedFlow::identity(1, 2);
        let out = adapt_forward_kl(f.clone(), &t, None, 1, &[vec![0.0]], &cfg).unwrap();
        assert_eq!(out.kernel, f);
    }

    #[test]
    fn esjd_tuning_grows_tiny_step_size() {
        let t = GaussianMixture::standard_normal(1);
        let cfg = AdaptConfig {
            rounds: 30,
            steps_per_round: 10,
            batch_size: 64,
            learning_rate: 0.1,
            seed: 4,
            ..AdaptConfig::default()
        };
        let k = HmcKernel::new(0.01, 1).unwrap();
        let out = adapt_esjd(k, &t, 1.0, &[vec![0.0]], &cfg).unwrap();
        assert!(out.kernel.eps > 0.05, "eps = {}", out.kernel.eps);
        assert_eq!(out.loss_trace.len(), 30);
    }
}
