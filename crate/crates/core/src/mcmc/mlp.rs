use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// One-hidden-layer tanh perceptron `R^D → R^D`:
/// `W2 tanh(W1 x + b1) + b2`, parameters flattened as `(W1, b1, W2, b2)`
/// with row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dim: usize,
    width: usize,
    params: Vec<f64>,
}

impl Mlp {
    pub const DEFAULT_WIDTH: usize = 16;

    pub fn zeros(dim: usize, width: usize) -> Self {
        Mlp {
            dim,
            width,
            params: vec![0.0; Self::n_params_for(dim, width)],
        }
    }

    pub fn random(dim: usize, width: usize, scale: f64, rng: &mut Rng) -> Self {
        let params = rng::normal_vec(rng, Self::n_params_for(dim, width))
            .into_iter()
            .map(|v| v * scale)
            .collect();
        Mlp { dim, width, params }
    }

    pub fn from_params(dim: usize, width: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::n_params_for(dim, width) {
            return Err(Error::input(format!(
                "perceptron with dim {dim} and width {width} takes {} parameters, got {}",
                Self::n_params_for(dim, width),
                params.len()
            )));
        }
        Ok(Mlp { dim, width, params })
    }

    pub fn n_params_for(dim: usize, width: usize) -> usize {
        2 * dim * width + width + dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_zero(&self) -> bool {
        self.params.iter().all(|p| *p == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (d, h) = (self.dim, self.width);
        let (w1, rest) = self.params.split_at(d * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h * d);
        let hidden: Vec<f64> = (0..h)
            .map(|i| {
                let row = &w1[i * d..(i + 1) * d];
                (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[i]).tanh()
            })
            .collect();
        (0..d)
            .map(|j| {
                let row = &w2[j * h..(j + 1) * h];
                row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + b2[j]
            })
            .collect()
    }
}
