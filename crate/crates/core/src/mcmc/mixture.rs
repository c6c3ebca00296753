use super::{accept_or_reject, ChainState, IndependentKernel, Kernel, Proposal, Transition};
use crate::error::{Error, Result};
use crate::model::Target;
use crate::rng::Rng;

/// `r` local steps followed by one independent flow step, repeating.
///
/// With 0-based step index `i`, step `i` is global exactly when
/// `i mod (r + 1) = r`.
#[derive(Debug, Clone)]
pub struct MixtureKernel<L> {
    pub local: L,
    pub global: IndependentKernel,
    pub local_per_global: usize,
}

impl<L: Kernel> MixtureKernel<L> {
    pub fn new(local: L, global: IndependentKernel, local_per_global: usize) -> Result<Self> {
        if local_per_global == 0 {
            return Err(Error::input("a mixture kernel needs at least one local step per global step"));
        }
        Ok(MixtureKernel {
            local,
            global,
            local_per_global,
        })
    }

    pub fn is_global_step(&self, step: u64) -> bool {
        let r = self.local_per_global as u64;
        step % (r + 1) == r
    }
}

impl<L: Kernel> Kernel for MixtureKernel<L> {
    /// Proposals outside a chain have no schedule position; they come from
    /// the local kernel.
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        self.local.propose(target, x, potential, rng)
    }

    fn step(&self, target: &dyn Target, state: &mut ChainState) -> Result<Transition> {
        let prop = if self.is_global_step(state.step) {
            self.global.propose(target, &state.x, state.potential, &mut state.rng)?
        } else {
            self.local.propose(target, &state.x, state.potential, &mut state.rng)?
        };
        Ok(accept_or_reject(prop, state))
    }
}
