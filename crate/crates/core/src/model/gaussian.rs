//! Closed-form Gaussian posteriors and the quadratic-potential structure of
//! conjugate models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::util::LN_2PI;

/// A multivariate normal with a validated, factorized covariance.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::input("covariance shape does not match mean"));
        }
        for i in 0..p {
            for j in 0..i {
                let (a, b) = (cov[(i, j)], cov[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::input(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::numeric("covariance is not positive definite"))?;
        Ok(GaussianPosterior { mean, cov, chol })
    }

    /// Builds the distribution from its precision matrix `A` and shift `b`
    /// (density proportional to `exp(-x'Ax/2 + b'x)`).
    pub fn from_natural(precision: &DMatrix<f64>, shift: &DVector<f64>) -> Result<Self> {
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| Error::numeric("precision is not positive definite"))?;
        let mean = chol.solve(shift);
        let mut cov = chol.inverse();
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov)
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let sol = self.chol.solve(&diff);
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov() + diff.dot(&sol))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z = DVector::from_vec(rng::normal_vec(rng, self.dim()));
        (&self.mean + self.chol.l() * z).as_slice().to_vec()
    }

    /// `KL(self || other)`.
    pub fn kl_to(&self, other: &GaussianPosterior) -> f64 {
        let p = self.dim() as f64;
        let other_prec = other.precision();
        let trace = (&other_prec * &self.cov).trace();
        let diff = &other.mean - &self.mean;
        let maha = diff.dot(&(&other_prec * &diff));
        0.5 * (trace + maha - p + other.log_det_cov() - self.log_det_cov())
    }
}

/// The quadratic structure of a conjugate Gaussian model: each datum
/// contributes `f_n(t) = -t'L_n t/2 + b_n't + c_n` and the prior is
/// `N(prior_mean, prior_precision^-1)`.
#[derive(Debug, Clone)]
pub struct ConjugateGaussian {
    pub prior_mean: DVector<f64>,
    pub prior_precision: DMatrix<f64>,
    pub datum_precision: Vec<DMatrix<f64>>,
    pub datum_shift: Vec<DVector<f64>>,
    pub datum_const: Vec<f64>,
}

impl ConjugateGaussian {
    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn n_data(&self) -> usize {
        self.datum_shift.len()
    }

    /// Precision and shift of `prior^prior_power * prod_n exp(w_n f_n)`.
    pub fn natural(&self, weights: &[f64], prior_power: f64) -> (DMatrix<f64>, DVector<f64>) {
        let mut prec = &self.prior_precision * prior_power;
        let mut shift = &self.prior_precision * &self.prior_mean * prior_power;
        for (n, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                prec += &self.datum_precision[n] * w;
                shift += &self.datum_shift[n] * w;
            }
        }
        (prec, shift)
    }

    pub fn posterior(&self, weights: &[f64], prior_power: f64) -> Result<GaussianPosterior> {
        if weights.len() != self.n_data() {
            return Err(Error::input(format!(
                "{} weights for {} data",
                weights.len(),
                self.n_data()
            )));
        }
        let (prec, shift) = self.natural(weights, prior_power);
        GaussianPosterior::from_natural(&prec, &shift)
    }

    /// `log ∫ prior(t)^prior_power * exp(sum_n w_n f_n(t)) dt`.
    pub fn log_evidence(&self, weights: &[f64], prior_power: f64) -> Result<f64> {
        let p = self.dim() as f64;
        let (prec, shift) = self.natural(weights, prior_power);
        let chol = Cholesky::new(prec)
            .ok_or_else(|| Error::numeric("precision is not positive definite"))?;
        let log_det_prec = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let prior_chol = Cholesky::new(self.prior_precision.clone())
            .ok_or_else(|| Error::numeric("prior precision is not positive definite"))?;
        let log_det_prior_prec =
            2.0 * prior_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let prior_quad = self.prior_mean.dot(&(&self.prior_precision * &self.prior_mean));
        let data_const: f64 = weights
            .iter()
            .zip(&self.datum_const)
            .map(|(w, c)| w * c)
            .sum();
        let prior_const = prior_power * (-0.5 * prior_quad - 0.5 * p * LN_2PI + 0.5 * log_det_prior_prec);
        let quad = shift.dot(&chol.solve(&shift));
        Ok(data_const + prior_const + 0.5 * p * LN_2PI - 0.5 * log_det_prec + 0.5 * quad)
    }

    /// Maximizer of the unweighted log likelihood.
    pub fn mle(&self) -> Result<DVector<f64>> {
        let p = self.dim();
        let mut prec = DMatrix::zeros(p, p);
        let mut shift = DVector::zeros(p);
        for (l, b) in self.datum_precision.iter().zip(&self.datum_shift) {
            prec += l;
            shift += b;
        }
        let chol = Cholesky::new(prec).ok_or_else(|| Error::numeric("likelihood is not identifiable"))?;
        Ok(chol.solve(&shift))
    }
}
