use super::Target;
use crate::error::{Error, Result};
use crate::util::{log_sum_exp, LN_2PI};

/// Isotropic Gaussian mixture `Σ_k w_k N(μ_k, scale² I)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    scale: f64,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, weights: Vec<f64>, scale: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::input("mixture needs at least one component"));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::input("component means must share a positive dimension"));
        }
        if weights.len() != means.len() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::input("weights must be positive, one per component"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::input("weights must sum to one"));
        }
        if !(scale > 0.0) {
            return Err(Error::input("scale must be positive"));
        }
        Ok(GaussianMixture {
            means,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            scale,
        })
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::new(vec![vec![0.0; d]], vec![1.0], 1.0).expect("valid")
    }

    /// Equal-weight two-component mixture at `±offset` on the first axis.
    pub fn symmetric_bimodal(d: usize, offset: f64, scale: f64) -> Self {
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        a[0] = -offset;
        b[0] = offset;
        Self::new(vec![a, b], vec![0.5, 0.5], scale).expect("valid")
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let s2 = self.scale * self.scale;
        let norm = -0.5 * d * (LN_2PI + s2.ln());
        self.means
            .iter()
            .zip(&self.log_weights)
            .map(|(m, lw)| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                lw + norm - 0.5 * sq / s2
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_logs(x))
    }
}

impl Target for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        -self.log_density(x)
    }

    fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        self.potential_and_grad(x).1
    }

    fn potential_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let logs = self.component_logs(x);
        let lse = log_sum_exp(&logs);
        let s2 = self.scale * self.scale;
        let mut g = vec![0.0; x.len()];
        for (m, l) in self.means.iter().zip(&logs) {
            let r = (l - lse).exp();
            for ((gi, xi), mi) in g.iter_mut().zip(x).zip(m) {
                *gi += r * (xi - mi) / s2;
            }
        }
        (-lse, g)
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }
}
