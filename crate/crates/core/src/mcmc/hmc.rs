use super::{Kernel, Proposal, Tunable, DIVERGENCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::model::Target;
use crate::rng::{self, Rng};
use crate::util::{all_finite, norm_sq};

/// Leapfrog HMC with identity mass matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcKernel {
    pub eps: f64,
    pub n_leapfrog: usize,
}

impl HmcKernel {
    pub fn new(eps: f64, n_leapfrog: usize) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::input(format!("step size must be positive, got {eps}")));
        }
        if n_leapfrog == 0 {
            return Err(Error::input("at least one leapfrog step is required"));
        }
        Ok(HmcKernel { eps, n_leapfrog })
    }
}

/// Integrates `n` leapfrog steps from `(x, v)`; returns the end point, end
/// momentum, and the potential there.
pub fn leapfrog(target: &dyn Target, x: &[f64], v: &[f64], eps: f64, n: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let half = 0.5 * eps;
    let mut x = x.to_vec();
    let mut v = v.to_vec();
    let mut g = target.grad_potential(&x);
    for _ in 0..n {
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi -= half * gi;
        }
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += eps * vi;
        }
        g = target.grad_potential(&x);
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi -= half * gi;
        }
        if !all_finite(&x) {
            break;
        }
    }
    let u = target.potential(&x);
    (x, v, u)
}

/// Log acceptance ratio of a Hamiltonian move, or `None` if it diverged.
pub(crate) fn hamiltonian_log_ratio(u0: f64, v0: &[f64], u1: f64, v1: &[f64], log_jac: f64) -> Option<f64> {
    let h0 = u0 + 0.5 * norm_sq(v0);
    let h1 = u1 + 0.5 * norm_sq(v1);
    let log_alpha = h0 - h1 + log_jac;
    if log_alpha.is_finite() && (h1 - h0).abs() <= DIVERGENCE_THRESHOLD {
        Some(log_alpha)
    } else {
        None
    }
}

pub fn hmc_propose(kernel: &HmcKernel, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
    let v0 = rng::normal_vec(rng, x.len());
    let (x1, v1, u1) = leapfrog(target, x, &v0, kernel.eps, kernel.n_leapfrog);
    if !all_finite(&x1) || !all_finite(&v1) {
        return Ok(Proposal::divergent(x, potential));
    }
    Ok(match hamiltonian_log_ratio(potential, &v0, u1, &v1, 0.0) {
        Some(log_alpha) => Proposal {
            x: x1,
            potential: u1,
            log_alpha,
            divergent: false,
        },
        None => Proposal::divergent(x, potential),
    })
}

impl Kernel for HmcKernel {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        hmc_propose(self, target, x, potential, rng)
    }
}

impl Tunable for HmcKernel {
    fn tunable_params(&self) -> Vec<f64> {
        vec![self.eps.ln()]
    }

    fn with_tunable_params(&self, p: &[f64]) -> Result<Self> {
        HmcKernel::new(p[0].exp(), self.n_leapfrog)
    }
}

/// Metropolis-adjusted Langevin: `x' = x - (ε²/2)∇U(x) + ε ξ`, corrected with
/// the Gaussian proposal densities in both directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaKernel {
    pub eps: f64,
}

impl MalaKernel {
    pub fn new(eps: f64) -> Result<Self> {
        HmcKernel::new(eps, 1)?;
        Ok(MalaKernel { eps })
    }

    fn log_q(&self, to: &[f64], from: &[f64], grad_from: &[f64]) -> f64 {
        let h = 0.5 * self.eps * self.eps;
        let d2: f64 = to
            .iter()
            .zip(from)
            .zip(grad_from)
            .map(|((t, f), g)| {
                let r = t - (f - h * g);
                r * r
            })
            .sum();
        -d2 / (2.0 * self.eps * self.eps)
    }
}

impl Kernel for MalaKernel {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        let xi = rng::normal_vec(rng, x.len());
        let g0 = target.grad_potential(x);
        let h = 0.5 * self.eps * self.eps;
        let x1: Vec<f64> = x
            .iter()
            .zip(&g0)
            .zip(&xi)
            .map(|((xi0, g), n)| xi0 - h * g + self.eps * n)
            .collect();
        let (u1, g1) = target.potential_and_grad(&x1);
        let log_alpha = potential - u1 + self.log_q(x, &x1, &g1) - self.log_q(&x1, x, &g0);
        if !log_alpha.is_finite() || log_alpha < -DIVERGENCE_THRESHOLD {
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

impl Tunable for MalaKernel {
    fn tunable_params(&self) -> Vec<f64> {
        vec![self.eps.ln()]
    }

    fn with_tunable_params(&self, p: &[f64]) -> Result<Self> {
        MalaKernel::new(p[0].exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMixture;
    use crate::util::sq_dist;

    #[test]
    fn rejects_bad_parameters() {
        assert!(HmcKernel::new(0.0, 3).is_err());
        assert!(HmcKernel::new(0.1, 0).is_err());
        assert!(MalaKernel::new(-1.0).is_err());
    }

    #[test]
    fn frozen_dynamics() {
        let t = GaussianMixture::standard_normal(2);
        let k = HmcKernel::new(1e-6, 1).unwrap();
        let x = [0.3, -0.7];
        let p = hmc_propose(&k, &t, &x, t.potential(&x), &mut rng::seeded(4)).unwrap();
        assert!(sq_dist(&p.x, &x).sqrt() < 1e-5);
        assert!(p.log_alpha.abs() < 1e-6);
    }

    #[test]
    fn quadratic_recurrence() {
        let t = GaussianMixture::standard_normal(1);
        let (eps, n) = (0.3, 5);
        let (mut x, mut v) = (1.2, -0.4);
        for _ in 0..n {
            v -= 0.5 * eps * x;
            x += eps * v;
            v -= 0.5 * eps * x;
        }
        let (x1, v1, _) = leapfrog(&t, &[1.2], &[-0.4], eps, n);
        assert_eq!(x1[0], x);
        assert_eq!(v1[0], v);
    }

    #[test]
    fn mala_matches_single_step_hmc_ratio() {
        let t = GaussianMixture::symmetric_bimodal(2, 1.5, 1.0);
        let x = [0.4, 1.1];
        let u = t.potential(&x);
        let a = MalaKernel::new(0.7).unwrap().propose(&t, &x, u, &mut rng::seeded(8)).unwrap();
        let b = hmc_propose(&HmcKernel::new(0.7, 1).unwrap(), &t, &x, u, &mut rng::seeded(8)).unwrap();
        assert!(sq_dist(&a.x, &b.x) < 1e-24);
        assert!((a.log_alpha - b.log_alpha).abs() < 1e-10);
    }
}
