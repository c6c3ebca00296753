use super::{Kernel, Proposal, Tunable};
use crate::error::Result;
use crate::flow::ComposedFlow;
use crate::model::Target;
use crate::rng::Rng;

/// Independent proposals drawn from a flow's pushforward.
#[derive(Debug, Clone)]
pub struct IndependentKernel {
    pub flow: ComposedFlow,
}

impl IndependentKernel {
    pub fn new(flow: ComposedFlow) -> Self {
        IndependentKernel { flow }
    }
}

/// `log [π(x')q(x)] / [π(x)q(x')]` from potentials and proposal log densities.
pub fn independent_log_ratio(u_x: f64, logq_x: f64, u_new: f64, logq_new: f64) -> f64 {
    (u_x - u_new) + (logq_x - logq_new)
}

impl Kernel for IndependentKernel {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        let (x1, logq_new) = self.flow.sample_one(rng)?;
        let logq_x = self.flow.log_density(x)?;
        let u1 = target.potential(&x1);
        let log_alpha = independent_log_ratio(potential, logq_x, u1, logq_new);
        if log_alpha.is_nan() || !u1.is_finite() {
            return Ok(Proposal::divergent(x, potential));
        }
        Ok(Proposal {
            x: x1,
            potential: u1,
            log_alpha,
            divergent: false,
        })
    }
}

impl Tunable for IndependentKernel {
    fn tunable_params(&self) -> Vec<f64> {
        self.flow.params()
    }

    fn with_tunable_params(&self, p: &[f64]) -> Result<Self> {
        let mut flow = self.flow.clone();
        flow.set_params(p)?;
        Ok(IndependentKernel { flow })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMixture;
    use crate::rng;

    #[test]
    fn exact_proposal_is_always_accepted() {
        let t = GaussianMixture::standard_normal(2);
        let k = IndependentKernel::new(ComposedFlow::identity(2, 2));
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            let x = rng::normal_vec(&mut r, 2);
            let p = k.propose(&t, &x, t.potential(&x), &mut r).unwrap();
            assert!(p.log_alpha.abs() < 1e-12);
        }
    }
}
