//! Mean-field variational Bayes.
//!
//! A [`MeanFieldState`] holds one exponential-family factor per coordinate.
//! Models in the conjugate catalogue ([`GaussianMeanField`] for Gaussian
//! location and known-noise linear regression, [`NormalGamma`]) give the
//! ELBO and the coordinate-ascent targets in closed form.

mod adaptive;
mod gaussian;
mod normal_gamma;

pub use adaptive::{adaptive_vb, model_weights, AdaptiveVbResult, ModelCollection, PSI_MC_DRAWS};
pub use gaussian::GaussianMeanField;
pub use normal_gamma::NormalGamma;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::distributed::StepSchedule;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::util::{mean, variance, LN_2PI};

/// Smallest Gaussian factor variance accepted by [`mc_elbo`].
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Offset from the domain boundary used when SVI has to project.
pub const PROJECTION_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Factor {
    Gaussian { mean: f64, var: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl Factor {
    pub fn family(&self) -> &'static str {
        match self {
            Factor::Gaussian { .. } => "gaussian",
            Factor::Gamma { .. } => "gamma",
        }
    }

    pub fn in_domain(&self) -> bool {
        match *self {
            Factor::Gaussian { mean, var } => mean.is_finite() && var > 0.0 && var.is_finite(),
            Factor::Gamma { shape, rate } => {
                shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()
            }
        }
    }

    /// Natural parameters: `(m/v, -1/(2v))` or `(a - 1, -b)`.
    pub fn natural(&self) -> [f64; 2] {
        match *self {
            Factor::Gaussian { mean, var } => [mean / var, -0.5 / var],
            Factor::Gamma { shape, rate } => [shape - 1.0, -rate],
        }
    }

    /// A factor of the same family with natural parameters `eta`.
    pub fn with_natural(&self, eta: [f64; 2]) -> Factor {
        match self {
            Factor::Gaussian { .. } => {
                let var = -0.5 / eta[1];
                Factor::Gaussian {
                    mean: eta[0] * var,
                    var,
                }
            }
            Factor::Gamma { .. } => Factor::Gamma {
                shape: eta[0] + 1.0,
                rate: -eta[1],
            },
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Factor::Gaussian { mean, .. } => mean,
            Factor::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Factor::Gaussian { var, .. } => var,
            Factor::Gamma { shape, rate } => shape / (rate * rate),
        }
    }

    /// `E[log x]`; only meaningful for Gamma factors.
    pub fn mean_log(&self) -> f64 {
        match *self {
            Factor::Gaussian { .. } => f64::NAN,
            Factor::Gamma { shape, rate } => digamma(shape) - rate.ln(),
        }
    }

    pub fn entropy(&self) -> f64 {
        match *self {
            Factor::Gaussian { var, .. } => 0.5 * (LN_2PI + 1.0 + var.ln()),
            Factor::Gamma { shape, rate } => {
                shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
            }
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Factor::Gaussian { mean, var } => {
                -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
            }
            Factor::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Factor::Gaussian { mean, var } => mean + var.sqrt() * rng::normal(rng),
            Factor::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate)
                .expect("in-domain gamma factor")
                .sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub factors: Vec<Factor>,
    pub elbo_trace: Vec<f64>,
}

impl MeanFieldState {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if let Some(j) = factors.iter().position(|f| !f.in_domain()) {
            return Err(Error::input(format!(
                "factor {j} ({}) is out of its domain: {:?}",
                factors[j].family(),
                factors[j]
            )));
        }
        Ok(MeanFieldState {
            factors,
            elbo_trace: Vec::new(),
        })
    }

    pub fn means(&self) -> Vec<f64> {
        self.factors.iter().map(Factor::mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.factors.iter().map(Factor::variance).collect()
    }

    pub fn last_elbo(&self) -> Option<f64> {
        self.elbo_trace.last().copied()
    }
}

/// A model with a mean-field family attached.
///
/// Only `n_factors`, `prior_state`, `log_likelihood` and `log_prior` are
/// required; the closed-form pieces default to [`Error::Unsupported`].
pub trait VbModel: Send + Sync {
    fn n_factors(&self) -> usize;

    fn n_data(&self) -> usize;

    /// Starting state: the prior itself when it factorizes, otherwise a
    /// product of its marginals.
    fn prior_state(&self) -> MeanFieldState;

    fn log_likelihood(&self, theta: &[f64]) -> f64;

    fn log_prior(&self, theta: &[f64]) -> f64;

    fn expected_log_likelihood(&self, _q: &[Factor]) -> Result<f64> {
        Err(Error::unsupported("no closed-form expected log likelihood; use mc_elbo"))
    }

    fn kl_to_prior(&self, _q: &[Factor]) -> Result<f64> {
        Err(Error::unsupported("no closed-form KL to the prior; use mc_elbo"))
    }

    /// The coordinate-ascent optimum for factor `j` given the others.
    /// With `batch`, data statistics are estimated from those indices and
    /// scaled by `N / |batch|`.
    fn cavi_target(&self, _q: &[Factor], _j: usize, _batch: Option<&[usize]>) -> Result<Factor> {
        Err(Error::unsupported("no closed-form coordinate update"))
    }

    fn log_evidence(&self) -> Option<f64> {
        None
    }
}

fn check_state(model: &dyn VbModel, q: &[Factor]) -> Result<()> {
    if q.len() != model.n_factors() {
        return Err(Error::input(format!(
            "state has {} factors, model has {}",
            q.len(),
            model.n_factors()
        )));
    }
    if let Some(j) = q.iter().position(|f| !f.in_domain()) {
        return Err(Error::input(format!("factor {j} ({}) is out of its domain", q[j].family())));
    }
    Ok(())
}

/// Closed-form `E_Q[log p(X | θ)] - KL(Q || prior)`.
pub fn elbo(model: &dyn VbModel, q: &MeanFieldState) -> Result<f64> {
    check_state(model, &q.factors)?;
    Ok(model.expected_log_likelihood(&q.factors)? - model.kl_to_prior(&q.factors)?)
}

/// One coordinate-ascent pass in ascending factor order.
pub fn cavi_sweep(model: &dyn VbModel, q: &MeanFieldState) -> Result<MeanFieldState> {
    let order: Vec<usize> = (0..model.n_factors()).collect();
    cavi_sweep_ordered(model, q, &order)
}

/// One coordinate-ascent pass visiting factors in `order`.
pub fn cavi_sweep_ordered(model: &dyn VbModel, q: &MeanFieldState, order: &[usize]) -> Result<MeanFieldState> {
    check_state(model, &q.factors)?;
    let mut next = q.clone();
    for &j in order {
        if j >= next.factors.len() {
            return Err(Error::input(format!("factor index {j} out of range")));
        }
        let updated = model.cavi_target(&next.factors, j, None)?;
        if !updated.in_domain() {
            return Err(Error::numeric(format!(
                "factor {j} ({}) left its domain: {updated:?}",
                updated.family()
            )));
        }
        next.factors[j] = updated;
    }
    let value = elbo(model, &next)?;
    next.elbo_trace.push(value);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviConfig {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Shuffle the update order each sweep with this seed.
    #[serde(default)]
    pub random_order_seed: Option<u64>,
}

impl Default for CaviConfig {
    fn default() -> Self {
        CaviConfig {
            tol: 1e-10,
            max_sweeps: 500,
            random_order_seed: None,
        }
    }
}

/// Sweeps until the ELBO changes by at most `tol` or `max_sweeps` is hit.
pub fn cavi_fit(model: &dyn VbModel, init: &MeanFieldState, cfg: &CaviConfig) -> Result<MeanFieldState> {
    if cfg.max_sweeps == 0 {
        return Ok(init.clone());
    }
    let mut q = init.clone();
    if q.elbo_trace.is_empty() {
        let start = elbo(model, &q)?;
        q.elbo_trace.push(start);
    }
    let mut order: Vec<usize> = (0..model.n_factors()).collect();
    let mut shuffler = cfg.random_order_seed.map(rng::seeded);
    for sweep in 0..cfg.max_sweeps {
        if let Some(r) = shuffler.as_mut() {
            order.shuffle(r);
        }
        let before = *q.elbo_trace.last().expect("trace is non-empty");
        let next = cavi_sweep_ordered(model, &q, &order)?;
        let after = *next.elbo_trace.last().expect("sweep appends");
        if !after.is_finite() {
            return Err(Error::Fit {
                sweep,
                reason: "non-finite ELBO".into(),
                trace: next.elbo_trace,
            });
        }
        q = next;
        if (after - before).abs() <= cfg.tol {
            break;
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviConfig {
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SviOutcome {
    pub state: MeanFieldState,
    /// Number of factor updates that had to be projected back into the domain.
    pub projections: usize,
}

fn project(factor: &Factor, mut eta: [f64; 2]) -> ([f64; 2], bool) {
    let mut hit = false;
    match factor {
        Factor::Gaussian { .. } => {
            if !(eta[1] < 0.0) {
                eta[1] = -PROJECTION_MARGIN;
                hit = true;
            }
        }
        Factor::Gamma { .. } => {
            if !(eta[0] > -1.0) {
                eta[0] = -1.0 + PROJECTION_MARGIN;
                hit = true;
            }
            if !(eta[1] < 0.0) {
                eta[1] = -PROJECTION_MARGIN;
                hit = true;
            }
        }
    }
    (eta, hit)
}

/// Stochastic variational inference: at iteration `t` each factor's natural
/// parameter moves a fraction `h_t` of the way to its minibatch-scaled
/// coordinate-ascent target.
pub fn svi_fit(model: &dyn VbModel, init: &MeanFieldState, cfg: &SviConfig) -> Result<SviOutcome> {
    cfg.schedule.validate()?;
    let n = model.n_data();
    if cfg.batch_size == 0 || cfg.batch_size > n {
        return Err(Error::input(format!("batch size {} for {n} data", cfg.batch_size)));
    }
    check_state(model, &init.factors)?;
    let mut q = init.clone();
    let mut rng = rng::seeded(cfg.seed);
    let mut projections = 0;
    let full: Vec<usize> = (0..n).collect();
    for t in 0..cfg.iters {
        let h = cfg.schedule.at(t);
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::input(format!("SVI step h_{t} = {h} is outside (0, 1]")));
        }
        let batch = if cfg.batch_size == n {
            full.clone()
        } else {
            rand::seq::index::sample(&mut rng, n, cfg.batch_size).into_vec()
        };
        for j in 0..q.factors.len() {
            let target = model.cavi_target(&q.factors, j, Some(&batch))?;
            let old = q.factors[j].natural();
            let goal = target.natural();
            let eta = if h == 1.0 {
                goal
            } else {
                [(1.0 - h) * old[0] + h * goal[0], (1.0 - h) * old[1] + h * goal[1]]
            };
            let (eta, hit) = project(&q.factors[j], eta);
            projections += hit as usize;
            q.factors[j] = if h == 1.0 && !hit { target } else { q.factors[j].with_natural(eta) };
        }
        let value = elbo(model, &q)?;
        q.elbo_trace.push(value);
    }
    Ok(SviOutcome { state: q, projections })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McElbo {
    pub value: f64,
    pub std_error: f64,
    pub n_draws: usize,
}

/// Monte Carlo ELBO. The expected log likelihood is always estimated by
/// sampling; the KL term is closed-form when the model provides it and
/// sampled otherwise.
pub fn mc_elbo(model: &dyn VbModel, q: &MeanFieldState, n_draws: usize, seed: u64) -> Result<McElbo> {
    check_state(model, &q.factors)?;
    if n_draws < 2 {
        return Err(Error::input("mc_elbo needs at least two draws"));
    }
    if let Some(j) = q
        .factors
        .iter()
        .position(|f| matches!(f, Factor::Gaussian { var, .. } if *var < VARIANCE_FLOOR))
    {
        return Err(Error::input(format!("factor {j} variance is below the floor {VARIANCE_FLOOR}")));
    }
    let kl = model.kl_to_prior(&q.factors).ok();
    let mut rng = rng::seeded(seed);
    let mut theta = vec![0.0; q.factors.len()];
    let mut terms = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        for (t, f) in theta.iter_mut().zip(&q.factors) {
            *t = f.sample(&mut rng);
        }
        let mut v = model.log_likelihood(&theta);
        if kl.is_none() {
            let log_q: f64 = theta.iter().zip(&q.factors).map(|(t, f)| f.log_density(*t)).sum();
            v += model.log_prior(&theta) - log_q;
        }
        if !v.is_finite() {
            return Err(Error::numeric("non-finite Monte Carlo ELBO term"));
        }
        terms.push(v);
    }
    Ok(McElbo {
        value: mean(&terms) - kl.unwrap_or(0.0),
        std_error: (variance(&terms) / n_draws as f64).sqrt(),
        n_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, GaussianLocation};

    fn location(ys: &[f64]) -> GaussianMeanField {
        let m = GaussianLocation::new(1, Dataset::scalar(ys).unwrap()).unwrap();
        GaussianMeanField::new(&m).unwrap()
    }

    #[test]
    fn natural_roundtrip() {
        for f in [
            Factor::Gaussian { mean: -1.5, var: 0.3 },
            Factor::Gamma { shape: 2.5, rate: 4.0 },
        ] {
            let back = f.with_natural(f.natural());
            assert!((back.mean() - f.mean()).abs() < 1e-14);
            assert!((back.variance() - f.variance()).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_entropy_matches_statrs() {
        use statrs::distribution::{Continuous, Gamma as G};
        use statrs::statistics::Distribution as _;
        let f = Factor::Gamma { shape: 3.2, rate: 1.7 };
        let g = G::new(3.2, 1.7).unwrap();
        assert!((f.entropy() - g.entropy().unwrap()).abs() < 1e-12);
        assert!((f.log_density(0.9) - g.ln_pdf(0.9)).abs() < 1e-12);
    }

    #[test]
    fn max_sweeps_zero_returns_init() {
        let m = location(&[1.0, 2.0]);
        let init = m.prior_state();
        let cfg = CaviConfig {
            max_sweeps: 0,
            ..CaviConfig::default()
        };
        assert_eq!(cavi_fit(&m, &init, &cfg).unwrap(), init);
    }

    #[test]
    fn fixed_point_is_stable() {
        let m = location(&[0.3, 1.4, -0.2]);
        let fit = cavi_fit(&m, &m.prior_state(), &CaviConfig::default()).unwrap();
        let again = cavi_sweep(&m, &fit).unwrap();
        for (a, b) in fit.factors.iter().zip(&again.factors) {
            assert!((a.mean() - b.mean()).abs() <= 1e-12);
            assert!((a.variance() - b.variance()).abs() <= 1e-12);
        }
    }

    #[test]
    fn wrong_factor_count_is_rejected() {
        let m = location(&[1.0]);
        let q = MeanFieldState::new(vec![
            Factor::Gaussian { mean: 0.0, var: 1.0 },
            Factor::Gaussian { mean: 0.0, var: 1.0 },
        ])
        .unwrap();
        assert!(matches!(elbo(&m, &q), Err(Error::Input(_))));
    }

    #[test]
    fn point_mass_is_excluded_from_mc_elbo() {
        let m = location(&[1.0]);
        let q = MeanFieldState::new(vec![Factor::Gaussian { mean: 0.0, var: 1e-13 }]).unwrap();
        assert!(mc_elbo(&m, &q, 10, 0).is_err());
    }

    #[test]
    fn projection_counts_boundary_hits() {
        let (eta, hit) = project(&Factor::Gamma { shape: 1.0, rate: 1.0 }, [-3.0, 0.5]);
        assert!(hit);
        assert_eq!(eta, [-1.0 + PROJECTION_MARGIN, -PROJECTION_MARGIN]);
        let (_, hit) = project(&Factor::Gaussian { mean: 0.0, var: 1.0 }, [0.0, -0.5]);
        assert!(!hit);
    }
}
