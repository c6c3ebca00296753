use rayon::prelude::*;

use super::{cavi_fit, elbo, mc_elbo, CaviConfig, MeanFieldState, VbModel};
use crate::error::{Error, Result};
use crate::util::log_sum_exp;

/// Draws used for `Ψ` when a member has no closed-form ELBO.
pub const PSI_MC_DRAWS: usize = 10_000;

/// Candidate models with prior probabilities `α_m`. Parameter spaces of
/// different members are unrelated.
pub struct ModelCollection {
    members: Vec<(Box<dyn VbModel>, f64)>,
}

impl ModelCollection {
    pub fn new(members: Vec<(Box<dyn VbModel>, f64)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::input("model collection is empty"));
        }
        if let Some((_, a)) = members.iter().find(|(_, a)| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::input(format!("prior model weight {a} is not positive")));
        }
        let total: f64 = members.iter().map(|(_, a)| a).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("prior model weights sum to {total}, not 1")));
        }
        Ok(ModelCollection { members })
    }

    /// Equal prior weights.
    pub fn uniform(models: Vec<Box<dyn VbModel>>) -> Result<Self> {
        let a = 1.0 / models.len().max(1) as f64;
        let members: Vec<_> = models.into_iter().map(|m| (m, a)).collect();
        if members.is_empty() {
            return Err(Error::input("model collection is empty"));
        }
        // 1/M summed M times need not be exactly one
        let total: f64 = members.iter().map(|(_, a)| a).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input("cannot split prior weight evenly"));
        }
        Ok(ModelCollection { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn prior_weights(&self) -> Vec<f64> {
        self.members.iter().map(|(_, a)| *a).collect()
    }

    pub fn model(&self, m: usize) -> &dyn VbModel {
        self.members[m].0.as_ref()
    }
}

/// The fitted mixture `Σ_m γ_m Q_m`.
#[derive(Debug, Clone)]
pub struct AdaptiveVbResult {
    pub fits: Vec<MeanFieldState>,
    pub weights: Vec<f64>,
    pub psi: Vec<f64>,
}

impl AdaptiveVbResult {
    pub fn best(&self) -> usize {
        self.weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty collection")
    }
}

/// `γ_m = α_m exp(-Ψ_m) / Σ_k α_k exp(-Ψ_k)`, normalized in log space.
pub fn model_weights(alpha: &[f64], psi: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = alpha.iter().zip(psi).map(|(a, p)| a.ln() - p).collect();
    let norm = log_sum_exp(&logits);
    logits.iter().map(|l| (l - norm).exp()).collect()
}

/// Fits every member with the same configuration, concurrently, then
/// weights the fits by prior probability times `exp(-Ψ_m)`.
pub fn adaptive_vb(collection: &ModelCollection, cfg: &CaviConfig, seed: u64) -> Result<AdaptiveVbResult> {
    let outcomes: Vec<Result<(MeanFieldState, f64)>> = collection
        .members
        .par_iter()
        .enumerate()
        .map(|(m, (model, _))| {
            let fit = cavi_fit(model.as_ref(), &model.prior_state(), cfg)?;
            let value = match elbo(model.as_ref(), &fit) {
                Ok(v) => v,
                Err(Error::Unsupported(_)) => mc_elbo(model.as_ref(), &fit, PSI_MC_DRAWS, seed.wrapping_add(m as u64))?.value,
                Err(e) => return Err(e),
            };
            if !value.is_finite() {
                return Err(Error::numeric("non-finite ELBO"));
            }
            Ok((fit, -value))
        })
        .collect();
    let total = outcomes.len();
    let messages: Vec<String> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(m, r)| r.as_ref().err().map(|e| format!("model {m}: {e}")))
        .collect();
    if !messages.is_empty() {
        return Err(Error::PartialFit {
            failed: messages.len(),
            total,
            messages,
        });
    }
    let (fits, psi): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|r| r.expect("checked")).unzip();
    let weights = model_weights(&collection.prior_weights(), &psi);
    Ok(AdaptiveVbResult { fits, weights, psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, GaussianLocation};
    use crate::varinf::GaussianMeanField;

    fn member(ys: &[f64]) -> Box<dyn VbModel> {
        let m = GaussianLocation::new(1, Dataset::scalar(ys).unwrap()).unwrap();
        Box::new(GaussianMeanField::new(&m).unwrap())
    }

    #[test]
    fn singleton_gets_all_weight() {
        let c = ModelCollection::new(vec![(member(&[1.0, 2.0]), 1.0)]).unwrap();
        let r = adaptive_vb(&c, &CaviConfig::default(), 0).unwrap();
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn tied_fits_keep_prior_weights() {
        let c = ModelCollection::new(vec![(member(&[0.5, 1.5]), 0.3), (member(&[0.5, 1.5]), 0.7)]).unwrap();
        let r = adaptive_vb(&c, &CaviConfig::default(), 0).unwrap();
        assert!((r.weights[0] - 0.3).abs() < 1e-12);
        assert!((r.weights[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn prior_weights_must_sum_to_one() {
        assert!(ModelCollection::new(vec![(member(&[1.0]), 0.5), (member(&[1.0]), 0.4)]).is_err());
        assert!(ModelCollection::new(vec![(member(&[1.0]), 1.5), (member(&[1.0]), -0.5)]).is_err());
    }

    #[test]
    fn failed_member_is_reported() {
        let cfg = CaviConfig {
            max_sweeps: 5,
            ..CaviConfig::default()
        };
        struct Broken;
        impl VbModel for Broken {
            fn n_factors(&self) -> usize {
                1
            }
            fn n_data(&self) -> usize {
                1
            }
            fn prior_state(&self) -> MeanFieldState {
                MeanFieldState::new(vec![crate::varinf::Factor::Gaussian { mean: 0.0, var: 1.0 }]).unwrap()
            }
            fn log_likelihood(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn log_prior(&self, _: &[f64]) -> f64 {
                0.0
            }
        }
        let c = ModelCollection::new(vec![(member(&[1.0]), 0.5), (Box::new(Broken), 0.5)]).unwrap();
        match adaptive_vb(&c, &cfg, 0) {
            Err(Error::PartialFit { failed, total, messages }) => {
                assert_eq!((failed, total), (1, 2));
                assert!(messages[0].starts_with("model 1"));
            }
            other => panic!("expected partial-fit error, got {other:?}"),
        }
    }
}
