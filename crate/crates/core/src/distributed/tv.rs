use crate::error::{Error, Result};
use crate::model::{conjugate_posterior, BayesModel, Dataset};
use crate::util::{mean, variance};

const TV_GRID: usize = 20_001;

fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
    let z = (x - m) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// `½ ∫ |N(m1, s1²) − N(m2, s2²)|` by the trapezoid rule over ±10 standard
/// deviations of both densities.
pub fn gaussian_tv(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let lo = (m1 - 10.0 * s1).min(m2 - 10.0 * s2);
    let hi = (m1 + 10.0 * s1).max(m2 + 10.0 * s2);
    let h = (hi - lo) / (TV_GRID - 1) as f64;
    let mut total = 0.0;
    for i in 0..TV_GRID {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == TV_GRID - 1 { 0.5 } else { 1.0 };
        total += w * (normal_pdf(x, m1, s1) - normal_pdf(x, m2, s2)).abs();
    }
    0.5 * total * h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvReport {
    /// TV between a Gaussian fitted to the combined draws and the exact posterior.
    pub tv_estimate: f64,
    /// `|θ̃ − θ̂|`: mean of shard MLEs against the full-data MLE.
    pub mle_gap: f64,
}

/// Reports both sides of the large-sample TV bound for a 1-D conjugate model.
pub fn tv_bound_check<M: BayesModel + Sized>(combined: &[Vec<f64>], model: &M, shards: &[Dataset]) -> Result<TvReport> {
    if model.dim() != 1 || combined.iter().any(|x| x.len() != 1) {
        return Err(Error::unsupported("the TV check is defined for one-dimensional parameters only"));
    }
    if combined.len() < 2 || shards.is_empty() {
        return Err(Error::input("the TV check needs at least two draws and one shard"));
    }
    let exact = conjugate_posterior(model)?;
    let xs: Vec<f64> = combined.iter().map(|x| x[0]).collect();
    let tv_estimate = gaussian_tv(mean(&xs), variance(&xs).sqrt(), exact.mean()[0], exact.cov()[(0, 0)].sqrt());
    let full = conjugate_mle(model)?;
    let mut shard_mean = 0.0;
    for s in shards {
        shard_mean += conjugate_mle(&model.with_dataset(s.clone())?)?;
    }
    shard_mean /= shards.len() as f64;
    Ok(TvReport {
        tv_estimate,
        mle_gap: (shard_mean - full).abs(),
    })
}

fn conjugate_mle(model: &dyn BayesModel) -> Result<f64> {
    let c = model
        .conjugate()
        .ok_or_else(|| Error::unsupported("the TV check requires a conjugate Gaussian model"))?;
    Ok(c.mle()?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_of_identical_gaussians_is_zero() {
        assert_eq!(gaussian_tv(0.3, 1.2, 0.3, 1.2), 0.0);
    }

    #[test]
    fn tv_of_shifted_unit_gaussians() {
        // TV(N(0,1), N(δ,1)) = 2Φ(δ/2) − 1; for δ = 1, Φ(0.5) = 0.691462461274013
        let tv = gaussian_tv(0.0, 1.0, 1.0, 1.0);
        assert!((tv - (2.0 * 0.691462461274013 - 1.0)).abs() < 1e-5);
    }
}
