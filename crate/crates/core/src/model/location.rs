use nalgebra::{DMatrix, DVector};

use super::{BayesModel, ConjugateGaussian, Dataset};
use crate::error::{Error, Result};
use crate::util::LN_2PI;

/// `θ ~ N(0, I_d)`, `y_n | θ ~ N(θ, I_d)`.
#[derive(Debug, Clone)]
pub struct GaussianLocation {
    data: Dataset,
    conj: ConjugateGaussian,
}

impl GaussianLocation {
    pub fn new(d: usize, data: Dataset) -> Result<Self> {
        if d == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if data.obs_dim() != d {
            return Err(Error::input(format!(
                "observations have dimension {}, model has {d}",
                data.obs_dim()
            )));
        }
        let eye = DMatrix::identity(d, d);
        let conj = ConjugateGaussian {
            prior_mean: DVector::zeros(d),
            prior_precision: eye.clone(),
            datum_precision: vec![eye; data.n_obs()],
            datum_shift: data.rows().map(DVector::from_column_slice).collect(),
            datum_const: data
                .rows()
                .map(|y| -0.5 * y.iter().map(|v| v * v).sum::<f64>() - 0.5 * d as f64 * LN_2PI)
                .collect(),
        };
        Ok(GaussianLocation { data, conj })
    }
}

impl BayesModel for GaussianLocation {
    fn dim(&self) -> usize {
        self.data.obs_dim()
    }

    fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        -0.5 * (theta.len() as f64 * LN_2PI + theta.iter().map(|t| t * t).sum::<f64>())
    }

    fn prior_grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| -t).collect()
    }

    fn datum_loglik(&self, theta: &[f64], n: usize) -> f64 {
        let y = self.data.row(n);
        let sq: f64 = y.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * (theta.len() as f64 * LN_2PI + sq)
    }

    fn add_datum_grad(&self, theta: &[f64], n: usize, scale: f64, out: &mut [f64]) {
        for ((o, y), t) in out.iter_mut().zip(self.data.row(n)).zip(theta) {
            *o += scale * (y - t);
        }
    }

    fn conjugate(&self) -> Option<&ConjugateGaussian> {
        Some(&self.conj)
    }

    fn with_dataset(&self, data: Dataset) -> Result<Self> {
        GaussianLocation::new(self.dim(), data)
    }
}
