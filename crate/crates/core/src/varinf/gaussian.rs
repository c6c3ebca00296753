use nalgebra::{Cholesky, DMatrix, DVector};

use super::{Factor, MeanFieldState, VbModel};
use crate::error::{Error, Result};
use crate::model::{BayesModel, ConjugateGaussian, GaussianPosterior};

/// Fully factorized Gaussian family over a conjugate Gaussian model
/// (Gaussian location, linear regression with known noise).
#[derive(Debug, Clone)]
pub struct GaussianMeanField {
    conj: ConjugateGaussian,
    lik_precision: DMatrix<f64>,
    lik_shift: DVector<f64>,
    lik_const: f64,
    post_precision: DMatrix<f64>,
    post_shift: DVector<f64>,
    prior_log_det: f64,
}

impl GaussianMeanField {
    pub fn new(model: &dyn BayesModel) -> Result<Self> {
        let conj = model.conjugate().ok_or_else(|| {
            Error::unsupported("closed-form mean-field updates need a conjugate Gaussian model; use mc_elbo")
        })?;
        Self::from_conjugate(conj.clone())
    }

    pub fn from_conjugate(conj: ConjugateGaussian) -> Result<Self> {
        let p = conj.dim();
        let mut lik_precision = DMatrix::zeros(p, p);
        let mut lik_shift = DVector::zeros(p);
        for (l, b) in conj.datum_precision.iter().zip(&conj.datum_shift) {
            lik_precision += l;
            lik_shift += b;
        }
        let lik_const = conj.datum_const.iter().sum();
        let chol = Cholesky::new(conj.prior_precision.clone())
            .ok_or_else(|| Error::input("prior precision is not positive definite"))?;
        let prior_log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let post_precision = &conj.prior_precision + &lik_precision;
        let post_shift = &conj.prior_precision * &conj.prior_mean + &lik_shift;
        Ok(GaussianMeanField {
            conj,
            lik_precision,
            lik_shift,
            lik_const,
            post_precision,
            post_shift,
            prior_log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.conj.dim()
    }

    pub fn exact_posterior(&self) -> Result<GaussianPosterior> {
        GaussianPosterior::from_natural(&self.post_precision, &self.post_shift)
    }

    fn moments(q: &[Factor]) -> (DVector<f64>, DVector<f64>) {
        let m = DVector::from_iterator(q.len(), q.iter().map(Factor::mean));
        let v = DVector::from_iterator(q.len(), q.iter().map(Factor::variance));
        (m, v)
    }

    fn batch_natural(&self, batch: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.dim();
        let scale = self.conj.n_data() as f64 / batch.len() as f64;
        let mut prec = DMatrix::zeros(p, p);
        let mut shift = DVector::zeros(p);
        for &n in batch {
            prec += &self.conj.datum_precision[n];
            shift += &self.conj.datum_shift[n];
        }
        (
            &self.conj.prior_precision + prec * scale,
            &self.conj.prior_precision * &self.conj.prior_mean + shift * scale,
        )
    }
}

impl VbModel for GaussianMeanField {
    fn n_factors(&self) -> usize {
        self.dim()
    }

    fn n_data(&self) -> usize {
        self.conj.n_data()
    }

    fn prior_state(&self) -> MeanFieldState {
        let factors = (0..self.dim())
            .map(|j| Factor::Gaussian {
                mean: self.conj.prior_mean[j],
                var: 1.0 / self.conj.prior_precision[(j, j)],
            })
            .collect();
        MeanFieldState {
            factors,
            elbo_trace: Vec::new(),
        }
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        -0.5 * t.dot(&(&self.lik_precision * &t)) + self.lik_shift.dot(&t) + self.lik_const
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let d = DVector::from_column_slice(theta) - &self.conj.prior_mean;
        let p = self.dim() as f64;
        -0.5 * d.dot(&(&self.conj.prior_precision * &d)) - 0.5 * p * crate::util::LN_2PI
            + 0.5 * self.prior_log_det
    }

    fn expected_log_likelihood(&self, q: &[Factor]) -> Result<f64> {
        let (m, v) = Self::moments(q);
        let trace: f64 = (0..m.len()).map(|j| self.lik_precision[(j, j)] * v[j]).sum();
        Ok(-0.5 * (m.dot(&(&self.lik_precision * &m)) + trace) + self.lik_shift.dot(&m) + self.lik_const)
    }

    fn kl_to_prior(&self, q: &[Factor]) -> Result<f64> {
        let (m, v) = Self::moments(q);
        let p0 = &self.conj.prior_precision;
        let d = &m - &self.conj.prior_mean;
        let trace: f64 = (0..m.len()).map(|j| p0[(j, j)] * v[j]).sum();
        let log_det_q: f64 = v.iter().map(|x| x.ln()).sum();
        Ok(0.5 * (trace + d.dot(&(p0 * &d)) - m.len() as f64 - self.prior_log_det - log_det_q))
    }

    fn cavi_target(&self, q: &[Factor], j: usize, batch: Option<&[usize]>) -> Result<Factor> {
        let owned;
        let (prec, shift) = match batch {
            None => (&self.post_precision, &self.post_shift),
            Some(b) => {
                owned = self.batch_natural(b);
                (&owned.0, &owned.1)
            }
        };
        let lambda = prec[(j, j)];
        let mut h = shift[j];
        for (k, f) in q.iter().enumerate() {
            if k != j {
                h -= prec[(j, k)] * f.mean();
            }
        }
        Ok(Factor::Gaussian {
            mean: h / lambda,
            var: 1.0 / lambda,
        })
    }

    fn log_evidence(&self) -> Option<f64> {
        self.conj.log_evidence(&vec![1.0; self.conj.n_data()], 1.0).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, GaussianLocation, LinearRegression};
    use crate::varinf::{cavi_fit, cavi_sweep, elbo, CaviConfig};

    #[test]
    fn elbo_at_exact_posterior_is_evidence() {
        let m = GaussianLocation::new(1, Dataset::scalar(&[2.0]).unwrap()).unwrap();
        let vb = GaussianMeanField::new(&m).unwrap();
        let q = MeanFieldState::new(vec![Factor::Gaussian { mean: 1.0, var: 0.5 }]).unwrap();
        // log N(2; 0, 2)
        let oracle = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 4.0 / 4.0;
        assert!((elbo(&vb, &q).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn prior_state_has_zero_kl() {
        let m = GaussianLocation::new(2, Dataset::new(vec![vec![1.0, -1.0]]).unwrap()).unwrap();
        let vb = GaussianMeanField::new(&m).unwrap();
        let q = vb.prior_state();
        assert!(vb.kl_to_prior(&q.factors).unwrap().abs() < 1e-15);
        assert_eq!(
            elbo(&vb, &q).unwrap(),
            vb.expected_log_likelihood(&q.factors).unwrap()
        );
    }

    #[test]
    fn correlated_design_underestimates_variance() {
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0];
        let ys = [0.1, 0.4, 1.2, 1.3, 2.1, 2.4, 3.2];
        let m = LinearRegression::polynomial(&xs, &ys, 1, 0.5, 10.0).unwrap();
        let vb = GaussianMeanField::new(&m).unwrap();
        let cfg = CaviConfig {
            tol: 0.0,
            max_sweeps: 2000,
            random_order_seed: None,
        };
        let fit = cavi_fit(&vb, &vb.prior_state(), &cfg).unwrap();
        let exact = vb.exact_posterior().unwrap();
        for j in 0..2 {
            assert!((fit.factors[j].mean() - exact.mean()[j]).abs() < 1e-8);
            assert!(fit.factors[j].variance() < exact.cov()[(j, j)]);
        }
    }

    #[test]
    fn sweep_is_monotone() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 0.5, 2.0, 2.5];
        let m = LinearRegression::polynomial(&xs, &ys, 2, 1.0, 4.0).unwrap();
        let vb = GaussianMeanField::new(&m).unwrap();
        let mut q = vb.prior_state();
        q.elbo_trace.push(elbo(&vb, &q).unwrap());
        for _ in 0..20 {
            let next = cavi_sweep(&vb, &q).unwrap();
            assert!(next.last_elbo().unwrap() >= q.last_elbo().unwrap() - 1e-10);
            q = next;
        }
    }
}
