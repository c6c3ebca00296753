use rand::Rng as _;

use super::hmc::hamiltonian_log_ratio;
use super::{HmcKernel, Kernel, Mlp, Proposal, Tunable};
use crate::error::{Error, Result};
use crate::model::Target;
use crate::rng::{self, Rng};
use crate::util::all_finite;

/// HMC whose leapfrog updates are rescaled and shifted by learned maps.
///
/// One step from `(x, ν)`:
/// ```text
/// ν½ = ν ⊙ e^{S_ν(x)}  − (ε/2)(∇U(x)  ⊙ e^{Q_ν(x)}  + T_ν(x))
/// x' = x ⊙ e^{S_x(ν½)} +  ε  (ν½      ⊙ e^{Q_x(ν½)} + T_x(ν½))
/// ν' = ν½ ⊙ e^{S_ν(x')} − (ε/2)(∇U(x') ⊙ e^{Q_ν(x')} + T_ν(x'))
/// ```
/// Each sub-update is triangular, so the log-Jacobian is the sum of the `S`
/// outputs. When any map is nonzero a fair coin picks the forward map or its
/// exact inverse, which makes the move an involution on the state extended by
/// the direction. With every map zero the updates reduce to plain leapfrog,
/// no coin is drawn, and the random stream is consumed exactly as by
/// [`HmcKernel`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedHmcKernel {
    pub base: HmcKernel,
    /// `[S_ν, Q_ν, T_ν, S_x, Q_x, T_x]`
    pub maps: Vec<Mlp>,
}

const S_V: usize = 0;
const Q_V: usize = 1;
const T_V: usize = 2;
const S_X: usize = 3;
const Q_X: usize = 4;
const T_X: usize = 5;

impl AugmentedHmcKernel {
    pub fn new(base: HmcKernel, maps: Vec<Mlp>) -> Result<Self> {
        if maps.len() != 6 {
            return Err(Error::input(format!("augmented HMC needs six maps, got {}", maps.len())));
        }
        let dim = maps[0].dim();
        if maps.iter().any(|m| m.dim() != dim) {
            return Err(Error::input("augmented HMC maps disagree on dimension"));
        }
        Ok(AugmentedHmcKernel { base, maps })
    }

    pub fn zero(base: HmcKernel, dim: usize) -> Self {
        AugmentedHmcKernel {
            base,
            maps: (0..6).map(|_| Mlp::zeros(dim, Mlp::DEFAULT_WIDTH)).collect(),
        }
    }

    pub fn random(base: HmcKernel, dim: usize, scale: f64, rng: &mut Rng) -> Self {
        AugmentedHmcKernel {
            base,
            maps: (0..6).map(|_| Mlp::random(dim, Mlp::DEFAULT_WIDTH, scale, rng)).collect(),
        }
    }

    pub fn maps_are_zero(&self) -> bool {
        self.maps.iter().all(Mlp::is_zero)
    }

    fn momentum_update(&self, target: &dyn Target, x: &[f64], v: &mut [f64]) -> f64 {
        let half = 0.5 * self.base.eps;
        let g = target.grad_potential(x);
        let s = self.maps[S_V].eval(x);
        let q = self.maps[Q_V].eval(x);
        let t = self.maps[T_V].eval(x);
        for i in 0..v.len() {
            v[i] = v[i] * s[i].exp() - half * (g[i] * q[i].exp() + t[i]);
        }
        s.iter().sum()
    }

    fn momentum_update_inv(&self, target: &dyn Target, x: &[f64], v: &mut [f64]) -> f64 {
        let half = 0.5 * self.base.eps;
        let g = target.grad_potential(x);
        let s = self.maps[S_V].eval(x);
        let q = self.maps[Q_V].eval(x);
        let t = self.maps[T_V].eval(x);
        for i in 0..v.len() {
            v[i] = (v[i] + half * (g[i] * q[i].exp() + t[i])) * (-s[i]).exp();
        }
        -s.iter().sum::<f64>()
    }

    fn position_update(&self, x: &mut [f64], v: &[f64]) -> f64 {
        let eps = self.base.eps;
        let s = self.maps[S_X].eval(v);
        let q = self.maps[Q_X].eval(v);
        let t = self.maps[T_X].eval(v);
        for i in 0..x.len() {
            x[i] = x[i] * s[i].exp() + eps * (v[i] * q[i].exp() + t[i]);
        }
        s.iter().sum()
    }

    fn position_update_inv(&self, x: &mut [f64], v: &[f64]) -> f64 {
        let eps = self.base.eps;
        let s = self.maps[S_X].eval(v);
        let q = self.maps[Q_X].eval(v);
        let t = self.maps[T_X].eval(v);
        for i in 0..x.len() {
            x[i] = (x[i] - eps * (v[i] * q[i].exp() + t[i])) * (-s[i]).exp();
        }
        -s.iter().sum::<f64>()
    }

    /// Applies `L` augmented steps (or their inverse) to `(x, v)`; returns the
    /// end point, end momentum and accumulated log-Jacobian.
    pub fn integrate(&self, target: &dyn Target, x: &[f64], v: &[f64], forward: bool) -> (Vec<f64>, Vec<f64>, f64) {
        let mut x = x.to_vec();
        let mut v = v.to_vec();
        let mut log_jac = 0.0;
        for _ in 0..self.base.n_leapfrog {
            if forward {
                log_jac += self.momentum_update(target, &x, &mut v);
                log_jac += self.position_update(&mut x, &v);
                log_jac += self.momentum_update(target, &x, &mut v);
            } else {
                log_jac += self.momentum_update_inv(target, &x, &mut v);
                log_jac += self.position_update_inv(&mut x, &v);
                log_jac += self.momentum_update_inv(target, &x, &mut v);
            }
            if !all_finite(&x) || !all_finite(&v) {
                break;
            }
        }
        (x, v, log_jac)
    }
}

impl Kernel for AugmentedHmcKernel {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        let v0 = rng::normal_vec(rng, x.len());
        let forward = self.maps_are_zero() || rng.random::<bool>();
        let (x1, v1, log_jac) = self.integrate(target, x, &v0, forward);
        if !all_finite(&x1) || !all_finite(&v1) || !log_jac.is_finite() {
            return Ok(Proposal::divergent(x, potential));
        }
        let u1 = target.potential(&x1);
        Ok(match hamiltonian_log_ratio(potential, &v0, u1, &v1, log_jac) {
            Some(log_alpha) => Proposal {
                x: x1,
                potential: u1,
                log_alpha,
                divergent: false,
            },
            None => Proposal::divergent(x, potential),
        })
    }
}

impl Tunable for AugmentedHmcKernel {
    fn tunable_params(&self) -> Vec<f64> {
        let mut p = vec![self.base.eps.ln()];
        for m in &self.maps {
            p.extend_from_slice(m.params());
        }
        p
    }

    fn with_tunable_params(&self, p: &[f64]) -> Result<Self> {
        let base = HmcKernel::new(p[0].exp(), self.base.n_leapfrog)?;
        let mut offset = 1;
        let mut maps = Vec::with_capacity(6);
        for m in &self.maps {
            let n = m.params().len();
            let slice = p
                .get(offset..offset + n)
                .ok_or_else(|| Error::input("too few augmented HMC parameters"))?;
            maps.push(Mlp::from_params(m.dim(), m.width(), slice.to_vec())?);
            offset += n;
        }
        if offset != p.len() {
            return Err(Error::input("too many augmented HMC parameters"));
        }
        AugmentedHmcKernel::new(base, maps)
    }
}
