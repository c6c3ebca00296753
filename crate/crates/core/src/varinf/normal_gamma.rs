use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{Factor, MeanFieldState, VbModel};
use crate::error::{Error, Result};
use crate::util::LN_2PI;

/// Unknown mean and precision:
/// `x_n ~ N(μ, 1/τ)`, `μ | τ ~ N(μ0, 1/(λ0 τ))`, `τ ~ Gamma(a0, b0)`.
///
/// The variational family is `q(μ) q(τ)` with a Gaussian and a Gamma factor,
/// in that order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalGamma {
    data: Vec<f64>,
    pub mu0: f64,
    pub lambda0: f64,
    pub a0: f64,
    pub b0: f64,
    #[serde(skip)]
    sum: f64,
    #[serde(skip)]
    sum_sq: f64,
}

/// Sufficient statistics, possibly minibatch-scaled.
struct Stats {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl NormalGamma {
    pub fn new(data: Vec<f64>, mu0: f64, lambda0: f64, a0: f64, b0: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::input("normal-gamma model needs data"));
        }
        if !(lambda0 > 0.0 && a0 > 0.0 && b0 > 0.0) {
            return Err(Error::input("λ0, a0 and b0 must be positive"));
        }
        if !data.iter().all(|x| x.is_finite()) || !mu0.is_finite() {
            return Err(Error::input("non-finite data or prior mean"));
        }
        let sum = data.iter().sum();
        let sum_sq = data.iter().map(|x| x * x).sum();
        Ok(NormalGamma {
            data,
            mu0,
            lambda0,
            a0,
            b0,
            sum,
            sum_sq,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn full_stats(&self) -> Stats {
        Stats {
            n: self.data.len() as f64,
            sum: self.sum,
            sum_sq: self.sum_sq,
        }
    }

    fn batch_stats(&self, batch: &[usize]) -> Stats {
        let n = self.data.len() as f64;
        let scale = n / batch.len() as f64;
        let (s, s2) = batch
            .iter()
            .map(|&i| self.data[i])
            .fold((0.0, 0.0), |(s, s2), x| (s + x, s2 + x * x));
        Stats {
            n,
            sum: s * scale,
            sum_sq: s2 * scale,
        }
    }

    fn unpack(q: &[Factor]) -> Result<(f64, f64, f64, f64, f64, f64)> {
        match (q[0], q[1]) {
            (Factor::Gaussian { mean, var }, g @ Factor::Gamma { shape, rate }) => {
                Ok((mean, var, shape, rate, g.mean(), g.mean_log()))
            }
            _ => Err(Error::input("normal-gamma state must be [gaussian, gamma]")),
        }
    }

    /// `E_q[Σ (x_n - μ)²]`.
    fn expected_sq(stats: &Stats, m: f64, v: f64) -> f64 {
        stats.sum_sq - 2.0 * m * stats.sum + stats.n * (m * m + v)
    }

    fn target(&self, q: &[Factor], j: usize, stats: &Stats) -> Result<Factor> {
        let (m, v, _, _, e_tau, _) = Self::unpack(q)?;
        match j {
            0 => {
                let prec = (self.lambda0 + stats.n) * e_tau;
                Ok(Factor::Gaussian {
                    mean: (self.lambda0 * self.mu0 + stats.sum) / (self.lambda0 + stats.n),
                    var: 1.0 / prec,
                })
            }
            1 => {
                let dev = m - self.mu0;
                Ok(Factor::Gamma {
                    shape: self.a0 + 0.5 * (stats.n + 1.0),
                    rate: self.b0
                        + 0.5 * (Self::expected_sq(stats, m, v) + self.lambda0 * (dev * dev + v)),
                })
            }
            _ => Err(Error::input(format!("normal-gamma has two factors, got index {j}"))),
        }
    }
}

impl VbModel for NormalGamma {
    fn n_factors(&self) -> usize {
        2
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn prior_state(&self) -> MeanFieldState {
        MeanFieldState {
            factors: vec![
                Factor::Gaussian {
                    mean: self.mu0,
                    var: self.b0 / (self.lambda0 * self.a0),
                },
                Factor::Gamma {
                    shape: self.a0,
                    rate: self.b0,
                },
            ],
            elbo_trace: Vec::new(),
        }
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let (mu, tau) = (theta[0], theta[1]);
        if tau <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let n = self.data.len() as f64;
        let sq = self.sum_sq - 2.0 * mu * self.sum + n * mu * mu;
        0.5 * n * (tau.ln() - LN_2PI) - 0.5 * tau * sq
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let (mu, tau) = (theta[0], theta[1]);
        if tau <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let prec = self.lambda0 * tau;
        let d = mu - self.mu0;
        0.5 * (prec.ln() - LN_2PI) - 0.5 * prec * d * d + self.a0 * self.b0.ln() - ln_gamma(self.a0)
            + (self.a0 - 1.0) * tau.ln()
            - self.b0 * tau
    }

    fn expected_log_likelihood(&self, q: &[Factor]) -> Result<f64> {
        let (m, v, _, _, e_tau, e_log_tau) = Self::unpack(q)?;
        let stats = self.full_stats();
        Ok(0.5 * stats.n * (e_log_tau - LN_2PI) - 0.5 * e_tau * Self::expected_sq(&stats, m, v))
    }

    fn kl_to_prior(&self, q: &[Factor]) -> Result<f64> {
        let (m, v, _, _, e_tau, e_log_tau) = Self::unpack(q)?;
        let d = m - self.mu0;
        let e_log_p_mu = 0.5 * (self.lambda0.ln() + e_log_tau - LN_2PI)
            - 0.5 * self.lambda0 * e_tau * (d * d + v);
        let e_log_p_tau = self.a0 * self.b0.ln() - ln_gamma(self.a0) + (self.a0 - 1.0) * e_log_tau
            - self.b0 * e_tau;
        Ok(-e_log_p_mu - e_log_p_tau - q[0].entropy() - q[1].entropy())
    }

    fn cavi_target(&self, q: &[Factor], j: usize, batch: Option<&[usize]>) -> Result<Factor> {
        let stats = match batch {
            None => self.full_stats(),
            Some(b) => self.batch_stats(b),
        };
        self.target(q, j, &stats)
    }

    fn log_evidence(&self) -> Option<f64> {
        let n = self.data.len() as f64;
        let xbar = self.sum / n;
        let ss = self.sum_sq - n * xbar * xbar;
        let lambda_n = self.lambda0 + n;
        let a_n = self.a0 + 0.5 * n;
        let d = xbar - self.mu0;
        let b_n = self.b0 + 0.5 * ss + self.lambda0 * n * d * d / (2.0 * lambda_n);
        Some(
            ln_gamma(a_n) - ln_gamma(self.a0) + self.a0 * self.b0.ln() - a_n * b_n.ln()
                + 0.5 * (self.lambda0 / lambda_n).ln()
                - 0.5 * n * LN_2PI,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::varinf::{cavi_fit, elbo, CaviConfig};

    fn model() -> NormalGamma {
        NormalGamma::new(vec![1.2, 0.4, 2.5, 1.9, 0.8, 1.1], 0.5, 2.0, 3.0, 2.0).unwrap()
    }

    #[test]
    fn evidence_matches_numeric_integral() {
        let m = model();
        // integrate prior x likelihood over (μ, log τ) on a grid
        let (mut total, h_mu, h_s) = (0.0, 0.005, 0.005);
        let mut mu = -4.0;
        while mu < 6.0 {
            let mut s = -6.0;
            while s < 4.0 {
                let tau: f64 = f64::exp(s);
                total += (m.log_likelihood(&[mu, tau]) + m.log_prior(&[mu, tau])).exp() * tau;
                s += h_s;
            }
            mu += h_mu;
        }
        let numeric = (total * h_mu * h_s).ln();
        assert!((numeric - m.log_evidence().unwrap()).abs() < 1e-4);
    }

    #[test]
    fn fit_stays_below_evidence() {
        let m = model();
        let fit = cavi_fit(&m, &m.prior_state(), &CaviConfig::default()).unwrap();
        let last = fit.last_elbo().unwrap();
        assert!(last <= m.log_evidence().unwrap() + 1e-10);
        assert!(fit.elbo_trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
        assert!((elbo(&m, &fit).unwrap() - last).abs() < 1e-12);
    }
}
