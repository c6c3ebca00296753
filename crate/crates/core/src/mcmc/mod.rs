//! Metropolis–Hastings kernels and their adaptation.
//!
//! Every kernel produces a [`Proposal`] carrying its own log acceptance ratio,
//! and [`Kernel::step`] turns that into an MH transition on a [`ChainState`],
//! which owns the chain's random stream. Kernels are immutable while a chain
//! runs; adaptation builds new kernels between rounds.

mod adapt;
mod augmented;
mod hmc;
mod independent;
mod involutive;
mod loss;
mod mixture;
mod mlp;
mod tune;

pub use adapt::{adapt_esjd, adapt_forward_kl, Adam, AdaptConfig, AdaptOutcome, Tunable};
pub use augmented::AugmentedHmcKernel;
pub use hmc::{hmc_propose, leapfrog, HmcKernel, MalaKernel};
pub use independent::{independent_log_ratio, IndependentKernel};
pub use involutive::{shear_flow, InvolutiveKernel};
pub use loss::{esjd_loss, forward_kl_loss, EsjdEstimate, LossSpec};
pub use mixture::MixtureKernel;
pub use mlp::Mlp;
pub use tune::{sample_tuned, HmcSampling, TunedDraws};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Target;
use crate::rng::{self, Rng};

/// Energy error beyond which a trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Position, cached potential, step counter and random stream of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub potential: f64,
    pub step: u64,
    pub rng: Rng,
}

impl ChainState {
    pub fn new(target: &dyn Target, x: Vec<f64>, seed: u64, stream: u64) -> Result<Self> {
        if x.len() != target.dim() {
            return Err(Error::input(format!(
                "initial point has dimension {}, target has {}",
                x.len(),
                target.dim()
            )));
        }
        let potential = target.potential(&x);
        if !potential.is_finite() {
            return Err(Error::numeric("potential is not finite at the initial point"));
        }
        Ok(ChainState {
            x,
            potential,
            step: 0,
            rng: rng::stream(seed, stream),
        })
    }
}

/// A candidate point with its MH log acceptance ratio.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub potential: f64,
    pub log_alpha: f64,
    pub divergent: bool,
}

impl Proposal {
    pub(crate) fn divergent(x: &[f64], potential: f64) -> Self {
        Proposal {
            x: x.to_vec(),
            potential,
            log_alpha: f64::NEG_INFINITY,
            divergent: true,
        }
    }

    /// `min(1, exp(log_alpha))`.
    pub fn accept_prob(&self) -> f64 {
        if self.divergent {
            0.0
        } else {
            self.log_alpha.min(0.0).exp()
        }
    }
}

/// Outcome of one MH step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub accepted: bool,
    pub log_alpha: f64,
    pub divergent: bool,
}

pub trait Kernel: Send + Sync {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal>;

    fn step(&self, target: &dyn Target, state: &mut ChainState) -> Result<Transition> {
        let prop = self.propose(target, &state.x, state.potential, &mut state.rng)?;
        Ok(accept_or_reject(prop, state))
    }
}

impl<K: Kernel + ?Sized> Kernel for Box<K> {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        (**self).propose(target, x, potential, rng)
    }

    fn step(&self, target: &dyn Target, state: &mut ChainState) -> Result<Transition> {
        (**self).step(target, state)
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        (**self).propose(target, x, potential, rng)
    }

    fn step(&self, target: &dyn Target, state: &mut ChainState) -> Result<Transition> {
        (**self).step(target, state)
    }
}

/// Draws the MH uniform and moves the state if the proposal is accepted.
pub(crate) fn accept_or_reject(prop: Proposal, state: &mut ChainState) -> Transition {
    let u: f64 = state.rng.random();
    let accepted = !prop.divergent && (prop.log_alpha >= 0.0 || u.ln() < prop.log_alpha);
    state.step += 1;
    if accepted {
        state.x = prop.x;
        state.potential = prop.potential;
    }
    Transition {
        accepted,
        log_alpha: prop.log_alpha,
        divergent: prop.divergent,
    }
}

/// One line of a chain file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub x: Vec<f64>,
    pub accept: bool,
    pub log_alpha: f64,
    pub divergent: bool,
}

/// Runs `n_steps` transitions and records the state after each.
pub fn run_chain<K: Kernel + ?Sized>(
    kernel: &K,
    target: &dyn Target,
    state: &mut ChainState,
    n_steps: usize,
) -> Result<Vec<StepRecord>> {
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let t = kernel.step(target, state)?;
        out.push(StepRecord {
            step: state.step,
            x: state.x.clone(),
            accept: t.accepted,
            log_alpha: t.log_alpha,
            divergent: t.divergent,
        });
    }
    Ok(out)
}

/// Positions of a recorded chain.
pub fn positions(records: &[StepRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| r.x.clone()).collect()
}

pub fn acceptance_rate(records: &[StepRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.accept).count() as f64 / records.len() as f64
}
