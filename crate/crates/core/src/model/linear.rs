use nalgebra::{DMatrix, DVector};

use super::{BayesModel, ConjugateGaussian, Dataset};
use crate::error::{Error, Result};
use crate::util::{dot, LN_2PI};

/// Bayesian linear regression with known noise variance:
/// `θ ~ N(0, prior_var I)`, `y_n | θ ~ N(x_n'θ, noise_var)`.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    data: Dataset,
    noise_var: f64,
    prior_var: f64,
    conj: ConjugateGaussian,
}

impl LinearRegression {
    pub fn new(data: Dataset, noise_var: f64, prior_var: f64) -> Result<Self> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::input("linear regression needs a label column"))?;
        if !(noise_var > 0.0 && prior_var > 0.0) {
            return Err(Error::input("variances must be positive"));
        }
        let p = data.obs_dim();
        let mut datum_precision = Vec::with_capacity(data.n_obs());
        let mut datum_shift = Vec::with_capacity(data.n_obs());
        let mut datum_const = Vec::with_capacity(data.n_obs());
        for (x, &y) in data.rows().zip(labels) {
            let xv = DVector::from_column_slice(x);
            datum_precision.push(&xv * xv.transpose() / noise_var);
            datum_shift.push(&xv * (y / noise_var));
            datum_const.push(-0.5 * y * y / noise_var - 0.5 * (LN_2PI + noise_var.ln()));
        }
        let conj = ConjugateGaussian {
            prior_mean: DVector::zeros(p),
            prior_precision: DMatrix::identity(p, p) / prior_var,
            datum_precision,
            datum_shift,
            datum_const,
        };
        Ok(LinearRegression {
            data,
            noise_var,
            prior_var,
            conj,
        })
    }

    /// Regression of `ys` on the monomials `1, x, …, x^degree`.
    pub fn polynomial(
        xs: &[f64],
        ys: &[f64],
        degree: usize,
        noise_var: f64,
        prior_var: f64,
    ) -> Result<Self> {
        let rows = xs
            .iter()
            .map(|x| (0..=degree).map(|k| x.powi(k as i32)).collect())
            .collect();
        Self::new(Dataset::with_labels(rows, ys.to_vec())?, noise_var, prior_var)
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    fn label(&self, n: usize) -> f64 {
        self.data.labels().expect("checked at construction")[n]
    }
}

impl BayesModel for LinearRegression {
    fn dim(&self) -> usize {
        self.data.obs_dim()
    }

    fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        let p = theta.len() as f64;
        -0.5 * (p * (LN_2PI + self.prior_var.ln()) + dot(theta, theta) / self.prior_var)
    }

    fn prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| -t / self.prior_var).collect()
    }

    fn datum_loglik(&self, theta: &[f64], n: usize) -> f64 {
        let r = self.label(n) - dot(self.data.row(n), theta);
        -0.5 * (LN_2PI + self.noise_var.ln() + r * r / self.noise_var)
    }

    fn add_datum_grad(&self, theta: &[f64], n: usize, scale: f64, out: &mut [f64]) {
        let x = self.data.row(n);
        let r = (self.label(n) - dot(x, theta)) / self.noise_var;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += scale * r * xi;
        }
    }

    fn conjugate(&self) -> Option<&ConjugateGaussian> {
        Some(&self.conj)
    }

    fn with_dataset(&self, data: Dataset) -> Result<Self> {
        LinearRegression::new(data, self.noise_var, self.prior_var)
    }
}
