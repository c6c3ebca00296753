use super::{BayesModel, Dataset};
use crate::error::{Error, Result};
use crate::util::{dot, sigmoid, softplus, LN_2PI};

/// Bernoulli-logit likelihood with an isotropic Gaussian prior.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    data: Dataset,
    prior_scale: f64,
}

impl LogisticRegression {
    pub fn new(data: Dataset, prior_scale: f64) -> Result<Self> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::input("logistic regression needs a label column"))?;
        if let Some(bad) = labels.iter().find(|y| **y != 0.0 && **y != 1.0) {
            return Err(Error::input(format!("label {bad} is not 0 or 1")));
        }
        if !(prior_scale > 0.0) {
            return Err(Error::input("prior scale must be positive"));
        }
        Ok(LogisticRegression { data, prior_scale })
    }

    fn label(&self, n: usize) -> f64 {
        self.data.labels().expect("checked at construction")[n]
    }
}

impl BayesModel for LogisticRegression {
    fn dim(&self) -> usize {
        self.data.obs_dim()
    }

    fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        let s2 = self.prior_scale * self.prior_scale;
        -0.5 * (theta.len() as f64 * (LN_2PI + s2.ln()) + dot(theta, theta) / s2)
    }

    fn prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        let s2 = self.prior_scale * self.prior_scale;
        theta.iter().map(|t| -t / s2).collect()
    }

    fn datum_loglik(&self, theta: &[f64], n: usize) -> f64 {
        let eta = dot(self.data.row(n), theta);
        self.label(n) * eta - softplus(eta)
    }

    fn add_datum_grad(&self, theta: &[f64], n: usize, scale: f64, out: &mut [f64]) {
        let x = self.data.row(n);
        let r = self.label(n) - sigmoid(dot(x, theta));
        for (o, xi) in out.iter_mut().zip(x) {
            *o += scale * r * xi;
        }
    }

    fn with_dataset(&self, data: Dataset) -> Result<Self> {
        LogisticRegression::new(data, self.prior_scale)
    }
}
