use rand::Rng as _;

use super::{acceptance_rate, run_chain, ChainState, HmcKernel, Kernel, StepRecord};
use crate::error::{Error, Result};
use crate::model::Target;
use crate::rng::{self, Rng};

const TUNE_BLOCK: usize = 100;
const TUNE_ROUNDS: usize = 40;
const DIVERGENCE_LIMIT: f64 = 0.5;
/// Sampling steps use `ε · U(1 − J, 1 + J)`.
const EPS_JITTER: f64 = 0.1;
const JITTER_STREAM: u64 = 1 << 40;

/// Settings for an HMC run whose step size is tuned before sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcSampling {
    pub init_eps: f64,
    pub n_leapfrog: usize,
    pub burn_in: usize,
    pub n_draws: usize,
}

impl Default for HmcSampling {
    fn default() -> Self {
        HmcSampling {
            init_eps: 0.1,
            n_leapfrog: 10,
            burn_in: 200,
            n_draws: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TunedDraws {
    pub draws: Vec<Vec<f64>>,
    pub eps: f64,
    pub acceptance: f64,
    pub divergence_rate: f64,
}

/// HMC with `ε` tuned to a 60–80% acceptance rate.
///
/// Tuning runs blocks of 100 steps, shrinking `ε` below 60% and growing it
/// above 80%, then `burn_in` further steps precede the `n_draws` recorded
/// ones. More than half of the recorded transitions diverging is an error.
pub fn sample_tuned(target: &dyn Target, start: Vec<f64>, cfg: &HmcSampling, seed: u64, stream: u64) -> Result<TunedDraws> {
    let mut state = ChainState::new(target, start, seed, stream)?;
    let mut eps = cfg.init_eps;
    for _ in 0..TUNE_ROUNDS {
        let rec = run_chain(&HmcKernel::new(eps, cfg.n_leapfrog)?, target, &mut state, TUNE_BLOCK)?;
        let acc = acceptance_rate(&rec);
        if acc < 0.6 {
            eps /= 1.4;
        } else if acc > 0.8 {
            eps *= 1.25;
        } else {
            break;
        }
    }
    let mut jitter = rng::stream(seed, stream ^ JITTER_STREAM);
    jittered_chain(target, &mut state, eps, cfg.n_leapfrog, cfg.burn_in, &mut jitter)?;
    let rec = jittered_chain(target, &mut state, eps, cfg.n_leapfrog, cfg.n_draws, &mut jitter)?;
    let divergence_rate = rec.iter().filter(|r| r.divergent).count() as f64 / rec.len().max(1) as f64;
    if divergence_rate > DIVERGENCE_LIMIT {
        return Err(Error::Divergence(format!(
            "{:.0}% of HMC transitions diverged",
            100.0 * divergence_rate
        )));
    }
    Ok(TunedDraws {
        acceptance: acceptance_rate(&rec),
        draws: rec.into_iter().map(|r| r.x).collect(),
        eps,
        divergence_rate,
    })
}

fn jittered_chain(
    target: &dyn Target,
    state: &mut ChainState,
    eps: f64,
    n_leapfrog: usize,
    n_steps: usize,
    jitter: &mut Rng,
) -> Result<Vec<StepRecord>> {
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let e = eps * (1.0 - EPS_JITTER + 2.0 * EPS_JITTER * jitter.random::<f64>());
        let t = HmcKernel::new(e, n_leapfrog)?.step(target, state)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMixture;

    #[test]
    fn tuning_lands_in_band() {
        let t = GaussianMixture::standard_normal(3);
        let cfg = HmcSampling {
            init_eps: 5.0,
            n_leapfrog: 5,
            burn_in: 0,
            n_draws: 2000,
        };
        let out = sample_tuned(&t, vec![0.0; 3], &cfg, 1, 0).unwrap();
        assert!(out.acceptance > 0.5 && out.acceptance < 0.9, "{}", out.acceptance);
        assert_eq!(out.draws.len(), 2000);
    }
}
