use nalgebra::{DMatrix, DVector};

use super::{validate_draws, WorkerDraws};
use crate::error::{Error, Result};
use crate::util::{mean, quantile_sorted};

fn sample_cov(draws: &[Vec<f64>]) -> DMatrix<f64> {
    let p = draws[0].len();
    let t = draws.len() as f64;
    let mut m = DVector::zeros(p);
    for x in draws {
        m += DVector::from_column_slice(x);
    }
    m /= t;
    let mut c = DMatrix::zeros(p, p);
    for x in draws {
        let d = DVector::from_column_slice(x) - &m;
        c += &d * d.transpose();
    }
    c / (t - 1.0)
}

/// Inverse sample covariance of each worker's draws.
pub fn consensus_weights(draws: &WorkerDraws) -> Result<Vec<DMatrix<f64>>> {
    if draws.t() < draws.dim() + 1 {
        return Err(Error::numeric(format!(
            "{} draws cannot give a non-singular {}-dimensional covariance; increase T",
            draws.t(),
            draws.dim()
        )));
    }
    draws
        .draws
        .iter()
        .enumerate()
        .map(|(j, d)| {
            sample_cov(d).try_inverse().filter(|w| w.iter().all(|v| v.is_finite())).ok_or_else(|| {
                Error::numeric(format!("subset {j} draws have a singular sample covariance; increase T"))
            })
        })
        .collect()
}

/// `θ_t = (Σ_j W_j)⁻¹ Σ_j W_j θ_(j)t` with `W_j` the inverse sample covariances.
pub fn consensus_gaussian(draws: &WorkerDraws) -> Result<Vec<Vec<f64>>> {
    let weights = consensus_weights(draws)?;
    let p = draws.dim();
    let total = weights.iter().fold(DMatrix::zeros(p, p), |acc, w| acc + w);
    let total_inv = total
        .try_inverse()
        .ok_or_else(|| Error::numeric("summed consensus weights are singular; increase T"))?;
    Ok((0..draws.t())
        .map(|t| {
            let mut s = DVector::zeros(p);
            for (w, d) in weights.iter().zip(&draws.draws) {
                s += w * DVector::from_column_slice(&d[t]);
            }
            (&total_inv * s).iter().copied().collect()
        })
        .collect())
}

fn scalar_columns(draws: &[Vec<Vec<f64>>], what: &str) -> Result<Vec<Vec<f64>>> {
    validate_draws(draws)?;
    if draws[0][0].len() != 1 {
        return Err(Error::unsupported(format!("{what} is defined for one-dimensional parameters only")));
    }
    Ok(draws
        .iter()
        .map(|d| {
            let mut v: Vec<f64> = d.iter().map(|x| x[0]).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect())
}

fn check_grid(alpha_grid: &[f64]) -> Result<()> {
    if alpha_grid.is_empty()
        || alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0))
        || alpha_grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::input("quantile levels must be strictly increasing inside (0, 1)"));
    }
    Ok(())
}

/// Mean over workers of their empirical `α`-quantiles, for each `α` in the grid.
pub fn quantile_average(draws: &[Vec<Vec<f64>>], alpha_grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(alpha_grid)?;
    let cols = scalar_columns(draws, "quantile averaging")?;
    Ok(alpha_grid
        .iter()
        .map(|&a| mean(&cols.iter().map(|c| quantile_sorted(c, a)).collect::<Vec<_>>()))
        .collect())
}

/// Geometric median of the workers' quantile functions under `W2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianFit {
    /// Median quantile function on the grid.
    pub quantiles: Vec<f64>,
    /// Final Weiszfeld weight of each worker, summing to one.
    pub weights: Vec<f64>,
    pub iterations: usize,
}

const WEISZFELD_TOL: f64 = 1e-8;
const WEISZFELD_MAX_ITER: usize = 10_000;

fn w2(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Weiszfeld iteration on quantile functions sampled at `alpha_grid`:
/// each iterate is the average of the worker quantile functions weighted by
/// inverse `W2` distance to the previous iterate.
pub fn wasserstein_median(draws: &[Vec<Vec<f64>>], alpha_grid: &[f64]) -> Result<MedianFit> {
    check_grid(alpha_grid)?;
    let cols = scalar_columns(draws, "the Wasserstein median")?;
    let qs: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| alpha_grid.iter().map(|&a| quantile_sorted(c, a)).collect())
        .collect();
    let k = qs.len();
    let g = alpha_grid.len();
    let mut cur: Vec<f64> = (0..g).map(|i| qs.iter().map(|q| q[i]).sum::<f64>() / k as f64).collect();
    let mut weights = vec![1.0 / k as f64; k];
    for iter in 1..=WEISZFELD_MAX_ITER {
        let dists: Vec<f64> = qs.iter().map(|q| w2(q, &cur)).collect();
        let scale = cur.iter().map(|v| v.abs()).fold(1.0, f64::max);
        if let Some(j) = dists.iter().position(|d| *d <= 1e-14 * scale) {
            let mut w = vec![0.0; k];
            w[j] = 1.0;
            return Ok(MedianFit {
                quantiles: qs[j].clone(),
                weights: w,
                iterations: iter,
            });
        }
        let inv: Vec<f64> = dists.iter().map(|d| 1.0 / d).collect();
        let total: f64 = inv.iter().sum();
        weights = inv.iter().map(|v| v / total).collect();
        let next: Vec<f64> = (0..g).map(|i| qs.iter().zip(&weights).map(|(q, w)| w * q[i]).sum()).collect();
        let change = w2(&next, &cur);
        let norm = (cur.iter().map(|v| v * v).sum::<f64>() / g as f64).sqrt();
        cur = next;
        if change <= WEISZFELD_TOL * norm.max(1e-300) {
            return Ok(MedianFit {
                quantiles: cur,
                weights,
                iterations: iter,
            });
        }
    }
    Err(Error::numeric("Weiszfeld iteration did not converge"))
}

/// Uniform mixture of worker draws shifted to a common centre.
#[derive(Debug, Clone, PartialEq)]
pub struct RecenteredMixture {
    /// `θ̂ + θ_(j)l − θ̂_j` for every worker `j` and draw `l`.
    pub atoms: Vec<Vec<f64>>,
    /// Grand mean `θ̂` of the worker means.
    pub center: Vec<f64>,
    /// Each atom's mass, `1/(KT)`.
    pub atom_weight: f64,
}

pub fn recentered_mixture(draws: &WorkerDraws) -> Result<RecenteredMixture> {
    validate_draws(&draws.draws)?;
    let p = draws.dim();
    let k = draws.k();
    let means: Vec<Vec<f64>> = draws
        .draws
        .iter()
        .map(|d| (0..p).map(|i| mean(&d.iter().map(|x| x[i]).collect::<Vec<_>>())).collect())
        .collect();
    let center: Vec<f64> = (0..p).map(|i| means.iter().map(|m| m[i]).sum::<f64>() / k as f64).collect();
    let atoms = draws
        .draws
        .iter()
        .zip(&means)
        .flat_map(|(d, m)| {
            let center = &center;
            d.iter()
                .map(move |x| (0..p).map(|i| center[i] + (x[i] - m[i])).collect::<Vec<f64>>())
        })
        .collect();
    Ok(RecenteredMixture {
        atoms,
        center,
        atom_weight: 1.0 / (k * draws.t()) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributed::SubsetMode;

    fn wrap(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn single_worker_consensus_is_identity() {
        let d = vec![wrap(&[0.1, 0.5, -0.3, 0.9])];
        let w = WorkerDraws::new(d.clone(), vec![1], SubsetMode::TemperedPrior).unwrap();
        let c = consensus_gaussian(&w).unwrap();
        for (a, b) in c.iter().zip(&d[0]) {
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_worker_is_singular() {
        let w = WorkerDraws::new(vec![wrap(&[1.0, 1.0, 1.0])], vec![1], SubsetMode::TemperedPrior).unwrap();
        assert!(consensus_gaussian(&w).is_err());
    }

    #[test]
    fn quantile_average_guards() {
        let d = vec![vec![vec![0.0, 1.0]; 4]];
        assert!(matches!(quantile_average(&d, &[0.5]), Err(Error::Unsupported(_))));
        let d = vec![wrap(&[1.0, 2.0, 3.0])];
        assert!(quantile_average(&d, &[0.5, 0.2]).is_err());
        assert_eq!(quantile_average(&d, &[0.5]).unwrap(), vec![2.0]);
    }

    #[test]
    fn median_of_one_worker_is_that_worker() {
        let d = vec![wrap(&[1.0, 2.0, 3.0, 4.0])];
        let grid = [0.25, 0.5, 0.75];
        let m = wasserstein_median(&d, &grid).unwrap();
        assert_eq!(m.quantiles, quantile_average(&d, &grid).unwrap());
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn recentred_mean_is_grand_mean() {
        let d = vec![wrap(&[0.0, 1.0, 2.0]), wrap(&[10.0, 11.0, 15.0])];
        let w = WorkerDraws::new(d, vec![1, 2], SubsetMode::PoweredLikelihood).unwrap();
        let r = recentered_mixture(&w).unwrap();
        let m = mean(&r.atoms.iter().map(|x| x[0]).collect::<Vec<_>>());
        assert!((m - r.center[0]).abs() < 1e-12);
        assert_eq!(r.atom_weight, 1.0 / 6.0);
    }
}
