//! Target distributions, Bayesian data models, datasets and the closed-form
//! Gaussian oracles the rest of the crate is verified against.

mod dataset;
mod gaussian;
mod linear;
mod location;
mod logistic;
mod mixture;

pub use dataset::{partition, Dataset};
pub use gaussian::{ConjugateGaussian, GaussianPosterior};
pub use linear::LinearRegression;
pub use location::GaussianLocation;
pub use logistic::LogisticRegression;
pub use mixture::GaussianMixture;

use crate::error::{Error, Result};

/// A distribution `pi(x) ∝ exp(-U(x))` on `R^D`, known through its potential.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    fn potential(&self, x: &[f64]) -> f64;

    fn grad_potential(&self, x: &[f64]) -> Vec<f64>;

    fn potential_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.potential(x), self.grad_potential(x))
    }

    /// `log ∫ exp(-U)`, when it is available in closed form.
    fn log_normalizer(&self) -> Option<f64> {
        None
    }
}

impl<T: Target + ?Sized> Target for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn potential(&self, x: &[f64]) -> f64 {
        (**self).potential(x)
    }
    fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        (**self).grad_potential(x)
    }
    fn potential_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (**self).potential_and_grad(x)
    }
    fn log_normalizer(&self) -> Option<f64> {
        (**self).log_normalizer()
    }
}

/// A prior times a product of per-datum likelihood factors `exp(f_n(θ))`.
pub trait BayesModel: Send + Sync {
    fn dim(&self) -> usize;

    fn dataset(&self) -> &Dataset;

    fn n_data(&self) -> usize {
        self.dataset().n_obs()
    }

    fn prior_logdensity(&self, theta: &[f64]) -> f64;

    /// Gradient of the log prior density.
    fn prior_grad(&self, theta: &[f64]) -> Vec<f64>;

    /// `f_n(θ)`, the log likelihood of datum `n`.
    fn datum_loglik(&self, theta: &[f64], n: usize) -> f64;

    /// Adds `scale * ∇f_n(θ)` to `out`.
    fn add_datum_grad(&self, theta: &[f64], n: usize, scale: f64, out: &mut [f64]);

    /// Quadratic structure, present only for conjugate Gaussian models.
    fn conjugate(&self) -> Option<&ConjugateGaussian> {
        None
    }

    /// The same model over a different dataset (used to build shard posteriors).
    fn with_dataset(&self, data: Dataset) -> Result<Self>
    where
        Self: Sized;

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        (0..self.n_data()).map(|n| self.datum_loglik(theta, n)).sum()
    }
}

/// Exact posterior of a conjugate model with all weights one.
pub fn conjugate_posterior(model: &dyn BayesModel) -> Result<GaussianPosterior> {
    conjugate_posterior_weighted(model, &vec![1.0; model.n_data()], 1.0)
}

/// Exact density proportional to `prior^prior_power * prod_n exp(w_n f_n)`.
pub fn conjugate_posterior_weighted(
    model: &dyn BayesModel,
    weights: &[f64],
    prior_power: f64,
) -> Result<GaussianPosterior> {
    model
        .conjugate()
        .ok_or_else(|| Error::unsupported("closed-form posterior requires a conjugate Gaussian model"))?
        .posterior(weights, prior_power)
}

/// Potential `U(θ) = -prior_power log π0(θ) - Σ_n w_n f_n(θ)`.
///
/// With unit weights this is the posterior; other settings give coreset
/// surrogates, tempered-prior shard posteriors and powered-likelihood shard
/// posteriors.
pub struct WeightedPotential<'a, M: BayesModel + ?Sized> {
    model: &'a M,
    terms: Vec<(usize, f64)>,
    prior_power: f64,
}

impl<'a, M: BayesModel + ?Sized> WeightedPotential<'a, M> {
    pub fn posterior(model: &'a M) -> Self {
        Self::uniform(model, 1.0, 1.0)
    }

    /// Every datum weighted by `likelihood_power`.
    pub fn uniform(model: &'a M, likelihood_power: f64, prior_power: f64) -> Self {
        WeightedPotential {
            model,
            terms: (0..model.n_data()).map(|n| (n, likelihood_power)).collect(),
            prior_power,
        }
    }

    /// Dense weight vector; zero entries are skipped at evaluation.
    pub fn weighted(model: &'a M, weights: &[f64]) -> Result<Self> {
        if weights.len() != model.n_data() {
            return Err(Error::input(format!(
                "{} weights for {} data",
                weights.len(),
                model.n_data()
            )));
        }
        Ok(WeightedPotential {
            model,
            terms: weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(n, w)| (n, *w))
                .collect(),
            prior_power: 1.0,
        })
    }

    pub fn dense_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.model.n_data()];
        for &(n, v) in &self.terms {
            w[n] = v;
        }
        w
    }
}

impl<M: BayesModel + ?Sized> Target for WeightedPotential<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let lik: f64 = self
            .terms
            .iter()
            .map(|&(n, w)| w * self.model.datum_loglik(x, n))
            .sum();
        -self.prior_power * self.model.prior_logdensity(x) - lik
    }

    fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.model.prior_grad(x);
        g.iter_mut().for_each(|v| *v *= self.prior_power);
        for &(n, w) in &self.terms {
            self.model.add_datum_grad(x, n, w, &mut g);
        }
        g.iter_mut().for_each(|v| *v = -*v);
        g
    }

    fn log_normalizer(&self) -> Option<f64> {
        self.model
            .conjugate()
            .and_then(|c| c.log_evidence(&self.dense_weights(), self.prior_power).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_potential_rejects_wrong_length() {
        let m = GaussianLocation::new(1, Dataset::scalar(&[1.0, 2.0]).unwrap()).unwrap();
        assert!(WeightedPotential::weighted(&m, &[1.0]).is_err());
    }

    #[test]
    fn potential_is_negated_log_joint() {
        let data = Dataset::scalar(&[0.5, -1.0, 2.0]).unwrap();
        let m = GaussianLocation::new(1, data).unwrap();
        let u = WeightedPotential::posterior(&m);
        let th = [0.3];
        let joint = m.prior_logdensity(&th) + m.log_likelihood(&th);
        assert!((u.potential(&th) + joint).abs() < 1e-12);
    }
}
