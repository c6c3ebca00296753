//! Convergence and efficiency diagnostics over recorded chains.
//!
//! Chains are slices of points in `R^D`. Multivariate quantities are reduced
//! over coordinates: autocorrelation averages them, ESS takes the worst
//! coordinate and R̂ the largest.

use crate::error::{Error, Result};
use crate::util::{mean, sq_dist};

fn check_len(chain: &[Vec<f64>], min: usize, what: &str) -> Result<usize> {
    if chain.len() < min {
        return Err(Error::input(format!("{what} needs at least {min} draws, got {}", chain.len())));
    }
    let d = chain[0].len();
    if d == 0 || chain.iter().any(|x| x.len() != d) {
        return Err(Error::input("chain points must share a positive dimension"));
    }
    Ok(d)
}

fn coordinate(chain: &[Vec<f64>], j: usize) -> Vec<f64> {
    chain.iter().map(|x| x[j]).collect()
}

/// Lag-`k` autocorrelations `ρ_0..=ρ_k` of a scalar series, with the biased
/// `1/T` normalisation.
fn autocorrelations(xs: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let c0: f64 = centered.iter().map(|c| c * c).sum();
    if c0 == 0.0 {
        return Err(Error::Diagnostic("autocorrelation of a constant series is undefined".into()));
    }
    Ok((0..=max_lag)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                centered.iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / c0
            }
        })
        .collect())
}

pub fn autocorrelation_scalar(xs: &[f64], k: usize) -> Result<f64> {
    if xs.len() <= k {
        return Err(Error::input(format!("lag {k} needs more than {k} draws")));
    }
    Ok(autocorrelations(xs, k)?[k])
}

/// Lag-`k` autocorrelation averaged over coordinates.
pub fn autocorrelation(chain: &[Vec<f64>], k: usize) -> Result<f64> {
    let d = check_len(chain, k + 1, "lag-k autocorrelation")?;
    let mut total = 0.0;
    for j in 0..d {
        total += autocorrelation_scalar(&coordinate(chain, j), k)?;
    }
    Ok(total / d as f64)
}

/// ESS of a scalar series with Geyer's initial positive sequence: pairs
/// `ρ_{2m} + ρ_{2m+1}` are summed until the first non-positive pair.
pub fn ess_scalar(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 100 {
        return Err(Error::input(format!("ESS needs at least 100 draws, got {n}")));
    }
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let c0: f64 = centered.iter().map(|c| c * c).sum();
    if c0 == 0.0 {
        return Err(Error::Diagnostic("ESS of a constant series is undefined".into()));
    }
    let rho = |k: usize| centered.iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / c0;
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = if lag == 0 { 1.0 } else { rho(lag) } + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok(n as f64 / tau.max(1.0 / n as f64))
}

pub fn ess_per_coordinate(chain: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = check_len(chain, 100, "ESS")?;
    (0..d).map(|j| ess_scalar(&coordinate(chain, j))).collect()
}

/// Smallest per-coordinate ESS.
pub fn effective_sample_size(chain: &[Vec<f64>]) -> Result<f64> {
    Ok(ess_per_coordinate(chain)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Potential scale reduction factor, maximised over coordinates.
pub fn gelman_rubin(chains: &[Vec<Vec<f64>>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::input("R̂ needs at least two chains"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::input("R̂ needs chains of equal length"));
    }
    let d = check_len(&chains[0], 2, "R̂")?;
    if chains.iter().all(|c| c == &chains[0]) {
        return Err(Error::Diagnostic(
            "identical chains carry no between-chain information".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| coordinate(c, j)).collect();
        let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
        let within = cols.iter().map(|c| crate::util::variance(c)).sum::<f64>() / cols.len() as f64;
        if within == 0.0 {
            return Err(Error::Diagnostic(format!("coordinate {j} has zero within-chain variance")));
        }
        let between_over_n = crate::util::variance(&means);
        let nf = n as f64;
        let var_plus = (nf - 1.0) / nf * within + between_over_n;
        worst = worst.max((var_plus / within).sqrt());
    }
    Ok(worst)
}

/// Mean squared jump `‖x_{t+1} − x_t‖²` along the realised chain.
pub fn esjd(chain: &[Vec<f64>]) -> Result<f64> {
    check_len(chain, 2, "ESJD")?;
    Ok(chain.windows(2).map(|w| sq_dist(&w[0], &w[1])).sum::<f64>() / (chain.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn lag_zero_is_one() {
        let c = wrap(&[1.0, 3.0, 2.0, 5.0]);
        assert_eq!(autocorrelation(&c, 0).unwrap(), 1.0);
        assert!(autocorrelation(&c, 4).is_err());
    }

    #[test]
    fn constant_chains_are_flagged() {
        let c = wrap(&[2.0; 200]);
        assert!(matches!(autocorrelation(&c, 1), Err(Error::Diagnostic(_))));
        assert!(matches!(effective_sample_size(&c), Err(Error::Diagnostic(_))));
        assert_eq!(esjd(&c).unwrap(), 0.0);
    }

    #[test]
    fn hand_autocorrelation() {
        // mean 0, c0 = 4, lag-1 products: -1 -1 -1
        let c = wrap(&[1.0, -1.0, 1.0, -1.0]);
        assert!((autocorrelation(&c, 1).unwrap() + 0.75).abs() < 1e-15);
    }

    #[test]
    fn rhat_guards() {
        let a = wrap(&[1.0, 2.0, 3.0]);
        assert!(gelman_rubin(&[a.clone()]).is_err());
        assert!(matches!(gelman_rubin(&[a.clone(), a.clone()]), Err(Error::Diagnostic(_))));
        assert!(gelman_rubin(&[a, wrap(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn ess_needs_length() {
        assert!(effective_sample_size(&wrap(&[0.0, 1.0])).is_err());
    }
}
