//! Declarative experiment files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coreset::Optimizer;
use crate::distributed::{StepSchedule, SubsetMode};
use crate::error::{Error, Result};
use crate::model::{Dataset, GaussianLocation, GaussianMixture, LinearRegression, LogisticRegression};
use crate::rng;
use crate::varinf::{CaviConfig, GaussianMeanField, NormalGamma, VbModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub engine: EngineSpec,
}

fn default_name() -> String {
    "experiment".into()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative data paths are resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let mut models: Vec<&mut ModelSpec> = self.model.iter_mut().collect();
        if let EngineSpec::Vb { members, .. } = &mut self.engine {
            models.extend(members.iter_mut().map(|m| &mut m.model));
        }
        for m in models {
            if let Some(DataSpec::Csv { path, .. }) = m.data_mut() {
                fix(path);
            }
        }
        match &mut self.engine {
            EngineSpec::Sample {
                kernel: KernelSpec::Independent { checkpoint } | KernelSpec::Mixture { checkpoint, .. },
                ..
            } => fix(checkpoint),
            _ => {}
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn engine_kind(&self) -> &'static str {
        self.engine.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let needs_model = !matches!(
            self.engine,
            EngineSpec::Vb {
                method: VbMethod::Adaptive,
                ..
            }
        );
        if needs_model && self.model.is_none() {
            return Err(Error::Config(format!("engine {:?} needs a [model] section", self.engine.kind())));
        }
        self.engine.validate()
    }

    pub fn model(&self) -> Result<&ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("missing [model] section".into()))
    }
}

/// Where observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Csv {
        path: PathBuf,
        #[serde(default)]
        label: Option<String>,
    },
    Inline {
        rows: Vec<Vec<f64>>,
        #[serde(default)]
        labels: Option<Vec<f64>>,
    },
    /// `n` draws from `N(mean, sd² I)`.
    Gaussian { n: usize, mean: Vec<f64>, sd: f64, seed: u64 },
    /// One feature `x ~ U(x_min, x_max)` and label `Σ_k c_k x^k + N(0, noise_sd²)`.
    Polynomial {
        n: usize,
        coefficients: Vec<f64>,
        noise_sd: f64,
        x_min: f64,
        x_max: f64,
        seed: u64,
    },
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Csv { path, label } => Dataset::from_csv(path, label.as_deref()),
            DataSpec::Inline { rows, labels } => match labels {
                Some(l) => Dataset::with_labels(rows.clone(), l.clone()),
                None => Dataset::new(rows.clone()),
            },
            DataSpec::Gaussian { n, mean, sd, seed } => {
                if !(*sd > 0.0) || mean.is_empty() {
                    return Err(Error::Config("gaussian data needs sd > 0 and a non-empty mean".into()));
                }
                let mut r = rng::seeded(*seed);
                let rows = (0..*n)
                    .map(|_| mean.iter().map(|m| m + sd * rng::normal(&mut r)).collect())
                    .collect();
                Dataset::new(rows)
            }
            DataSpec::Polynomial {
                n,
                coefficients,
                noise_sd,
                x_min,
                x_max,
                seed,
            } => {
                use rand::Rng;
                if !(x_min < x_max) || !(*noise_sd >= 0.0) {
                    return Err(Error::Config("polynomial data needs x_min < x_max and noise_sd ≥ 0".into()));
                }
                let mut r = rng::seeded(*seed);
                let mut rows = Vec::with_capacity(*n);
                let mut labels = Vec::with_capacity(*n);
                for _ in 0..*n {
                    let x: f64 = r.random_range(*x_min..*x_max);
                    let y: f64 = coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c);
                    rows.push(vec![x]);
                    labels.push(y + noise_sd * rng::normal(&mut r));
                }
                Dataset::with_labels(rows, labels)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    StandardNormal {
        dim: usize,
    },
    /// Equal mixture of `N(±offset·1, scale² I)`.
    Bimodal {
        dim: usize,
        offset: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    GaussianLocation {
        data: DataSpec,
    },
    /// With `degree`, the single feature is expanded to `1, x, …, x^degree`.
    LinearRegression {
        data: DataSpec,
        noise_var: f64,
        prior_var: f64,
        #[serde(default)]
        degree: Option<usize>,
    },
    LogisticRegression {
        data: DataSpec,
        #[serde(default = "one")]
        prior_scale: f64,
    },
    NormalGamma {
        data: DataSpec,
        #[serde(default)]
        mu0: f64,
        #[serde(default = "one")]
        lambda0: f64,
        #[serde(default = "one")]
        a0: f64,
        #[serde(default = "one")]
        b0: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// A model materialised from its spec.
pub enum BuiltModel {
    Density(GaussianMixture),
    Location(GaussianLocation),
    Linear(LinearRegression),
    Logistic(LogisticRegression),
    NormalGamma(NormalGamma),
}

impl ModelSpec {
    fn data_mut(&mut self) -> Option<&mut DataSpec> {
        match self {
            ModelSpec::StandardNormal { .. } | ModelSpec::Bimodal { .. } => None,
            ModelSpec::GaussianLocation { data }
            | ModelSpec::LinearRegression { data, .. }
            | ModelSpec::LogisticRegression { data, .. }
            | ModelSpec::NormalGamma { data, .. } => Some(data),
        }
    }

    pub fn build(&self) -> Result<BuiltModel> {
        Ok(match self {
            ModelSpec::StandardNormal { dim } => {
                if *dim == 0 {
                    return Err(Error::Config("dim must be positive".into()));
                }
                BuiltModel::Density(GaussianMixture::standard_normal(*dim))
            }
            ModelSpec::Bimodal { dim, offset, scale } => {
                if *dim == 0 || !(*scale > 0.0) {
                    return Err(Error::Config("bimodal target needs dim > 0 and scale > 0".into()));
                }
                BuiltModel::Density(GaussianMixture::symmetric_bimodal(*dim, *offset, *scale))
            }
            ModelSpec::GaussianLocation { data } => {
                let d = data.load()?;
                BuiltModel::Location(GaussianLocation::new(d.obs_dim(), d)?)
            }
            ModelSpec::LinearRegression {
                data,
                noise_var,
                prior_var,
                degree,
            } => {
                let d = data.load()?;
                let model = match degree {
                    Some(deg) => {
                        if d.obs_dim() != 1 {
                            return Err(Error::Config("polynomial regression needs exactly one feature".into()));
                        }
                        let xs: Vec<f64> = d.rows().map(|r| r[0]).collect();
                        let ys = d
                            .labels()
                            .ok_or_else(|| Error::Config("regression data needs labels".into()))?;
                        LinearRegression::polynomial(&xs, ys, *deg, *noise_var, *prior_var)?
                    }
                    None => LinearRegression::new(d, *noise_var, *prior_var)?,
                };
                BuiltModel::Linear(model)
            }
            ModelSpec::LogisticRegression { data, prior_scale } => {
                BuiltModel::Logistic(LogisticRegression::new(data.load()?, *prior_scale)?)
            }
            ModelSpec::NormalGamma {
                data,
                mu0,
                lambda0,
                a0,
                b0,
            } => {
                let d = data.load()?;
                if d.obs_dim() != 1 {
                    return Err(Error::Config("normal-gamma data must be scalar".into()));
                }
                BuiltModel::NormalGamma(NormalGamma::new(d.rows().map(|r| r[0]).collect(), *mu0, *lambda0, *a0, *b0)?)
            }
        })
    }
}

impl BuiltModel {
    pub fn bayes(&self) -> Option<&dyn crate::model::BayesModel> {
        match self {
            BuiltModel::Location(m) => Some(m),
            BuiltModel::Linear(m) => Some(m),
            BuiltModel::Logistic(m) => Some(m),
            BuiltModel::Density(_) | BuiltModel::NormalGamma(_) => None,
        }
    }

    /// The sampling target: the density itself or the posterior.
    pub fn target(&self) -> Result<Box<dyn crate::model::Target + '_>> {
        use crate::model::WeightedPotential;
        Ok(match self {
            BuiltModel::Density(m) => Box::new(m.clone()),
            BuiltModel::Location(m) => Box::new(WeightedPotential::posterior(m)),
            BuiltModel::Linear(m) => Box::new(WeightedPotential::posterior(m)),
            BuiltModel::Logistic(m) => Box::new(WeightedPotential::posterior(m)),
            BuiltModel::NormalGamma(_) => {
                return Err(Error::unsupported("the normal-gamma model is only available to the vb engine"))
            }
        })
    }

    pub fn vb(self) -> Result<Box<dyn VbModel>> {
        Ok(match self {
            BuiltModel::Location(m) => Box::new(GaussianMeanField::new(&m)?),
            BuiltModel::Linear(m) => Box::new(GaussianMeanField::new(&m)?),
            BuiltModel::NormalGamma(m) => Box::new(m),
            BuiltModel::Logistic(_) | BuiltModel::Density(_) => {
                return Err(Error::unsupported(
                    "mean-field VB supports gaussian_location, linear_regression and normal_gamma",
                ))
            }
        })
    }

    /// Observations as rows (labels appended last), for hashing.
    pub(crate) fn data_words(&self) -> Vec<f64> {
        let data = match self {
            BuiltModel::Density(_) => return Vec::new(),
            BuiltModel::NormalGamma(m) => return m.data().to_vec(),
            BuiltModel::Location(m) => crate::model::BayesModel::dataset(m),
            BuiltModel::Linear(m) => crate::model::BayesModel::dataset(m),
            BuiltModel::Logistic(m) => crate::model::BayesModel::dataset(m),
        };
        let mut out: Vec<f64> = data.rows().flatten().copied().collect();
        if let Some(l) = data.labels() {
            out.extend_from_slice(l);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Hmc { eps: f64, n_leapfrog: usize },
    Mala { eps: f64 },
    /// Augmented HMC with all maps zero.
    AugmentedHmc { eps: f64, n_leapfrog: usize },
    /// Independent proposals from a checkpointed flow.
    Independent { checkpoint: PathBuf },
    /// MALA with a flow proposal every `local_per_global + 1` steps.
    Mixture {
        checkpoint: PathBuf,
        local_eps: f64,
        #[serde(default = "ten")]
        local_per_global: usize,
    },
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptLoss {
    ForwardKl,
    Esjd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoresetMethod {
    Uniform,
    SparseRegression,
    /// Uniform subsample, then weight optimisation.
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerSpec {
    FirstOrder,
    QuasiNewton,
}

impl From<OptimizerSpec> for Optimizer {
    fn from(o: OptimizerSpec) -> Self {
        match o {
            OptimizerSpec::FirstOrder => Optimizer::FirstOrder,
            OptimizerSpec::QuasiNewton => Optimizer::QuasiNewton,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerSpec {
    Consensus,
    Recentered,
    QuantileAverage,
    WassersteinMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub model: ModelSpec,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbMethod {
    Cavi,
    Svi,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SviSpec {
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineSpec {
    Sample {
        kernel: KernelSpec,
        steps: usize,
        #[serde(default)]
        burn_in: usize,
        #[serde(default = "one_usize")]
        chains: usize,
        /// One start per chain; zeros when absent.
        #[serde(default)]
        init: Option<Vec<Vec<f64>>>,
    },
    Adapt {
        loss: AdaptLoss,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "eight")]
        layers: usize,
        #[serde(default = "half")]
        init_scale: f64,
        walkers: Vec<Vec<f64>>,
        rounds: usize,
        #[serde(default = "ten")]
        steps_per_round: usize,
        #[serde(default = "batch_default")]
        batch_size: usize,
        #[serde(default = "lr_default")]
        learning_rate: f64,
        /// MALA step for forward-KL, base HMC step for ESJD.
        local_eps: f64,
        #[serde(default = "four")]
        n_leapfrog: usize,
        #[serde(default = "ten")]
        local_per_global: usize,
        /// Length of the chain run with the adapted kernel.
        #[serde(default = "sample_default")]
        sample_steps: usize,
    },
    Coreset {
        method: CoresetMethod,
        budget: usize,
        #[serde(default = "draws_default")]
        n_draws: usize,
        #[serde(default = "opt_default")]
        n_opt_steps: usize,
        #[serde(default = "one")]
        step_size: f64,
        #[serde(default = "qn")]
        optimizer: OptimizerSpec,
        #[serde(default = "ten")]
        n_leapfrog: usize,
        #[serde(default = "burn_default")]
        burn_in: usize,
    },
    Distribute {
        shards: usize,
        mode: SubsetMode,
        combiners: Vec<CombinerSpec>,
        #[serde(default = "draws_default")]
        n_draws: usize,
        #[serde(default = "burn_default")]
        burn_in: usize,
        #[serde(default = "ten")]
        n_leapfrog: usize,
        #[serde(default = "grid_default")]
        quantile_grid: usize,
    },
    Sgld {
        batch_size: usize,
        schedule: StepSchedule,
        steps: usize,
    },
    Dsgld {
        shards: usize,
        batch_size: usize,
        block_len: usize,
        schedule: StepSchedule,
        steps: usize,
    },
    Axda {
        shards: usize,
        rho: f64,
        iters: usize,
        #[serde(default)]
        burn_in: usize,
    },
    Vb {
        method: VbMethod,
        #[serde(default)]
        svi: Option<SviSpec>,
        /// Candidate models for the adaptive method.
        #[serde(default)]
        members: Vec<MemberSpec>,
        #[serde(default = "tol_default")]
        tol: f64,
        #[serde(default = "sweeps_default")]
        max_sweeps: usize,
        #[serde(default)]
        random_order: bool,
    },
}

fn one_usize() -> usize {
    1
}
fn four() -> usize {
    4
}
fn eight() -> usize {
    8
}
fn half() -> f64 {
    0.5
}
fn batch_default() -> usize {
    256
}
fn lr_default() -> f64 {
    0.01
}
fn sample_default() -> usize {
    10_000
}
fn draws_default() -> usize {
    1000
}
fn opt_default() -> usize {
    50
}
fn burn_default() -> usize {
    200
}
fn qn() -> OptimizerSpec {
    OptimizerSpec::QuasiNewton
}
fn grid_default() -> usize {
    99
}
fn tol_default() -> f64 {
    1e-10
}
fn sweeps_default() -> usize {
    500
}

impl EngineSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EngineSpec::Sample { .. } => "sample",
            EngineSpec::Adapt { .. } => "adapt",
            EngineSpec::Coreset { .. } => "coreset",
            EngineSpec::Distribute { .. } => "distribute",
            EngineSpec::Sgld { .. } => "sgld",
            EngineSpec::Dsgld { .. } => "dsgld",
            EngineSpec::Axda { .. } => "axda",
            EngineSpec::Vb { .. } => "vb",
        }
    }

    /// CLI subcommand that runs this engine.
    pub fn command(&self) -> &'static str {
        match self {
            EngineSpec::Sgld { .. } | EngineSpec::Dsgld { .. } | EngineSpec::Axda { .. } => "distribute",
            other => other.kind(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        match self {
            EngineSpec::Sample { steps, chains, init, .. } => {
                if *steps == 0 || *chains == 0 {
                    return bad("sample needs steps > 0 and chains > 0");
                }
                if let Some(i) = init {
                    if i.len() != *chains {
                        return bad("init must list one start per chain");
                    }
                }
            }
            EngineSpec::Adapt {
                loss,
                lambda,
                walkers,
                rounds,
                ..
            } => {
                if walkers.is_empty() || *rounds == 0 {
                    return bad("adapt needs at least one walker and one round");
                }
                if *loss == AdaptLoss::Esjd && lambda.is_none() {
                    return bad("the esjd loss needs lambda");
                }
            }
            EngineSpec::Coreset { budget, .. } => {
                if *budget == 0 {
                    return bad("coreset budget must be positive");
                }
            }
            EngineSpec::Distribute { shards, combiners, .. } => {
                if *shards == 0 || combiners.is_empty() {
                    return bad("distribute needs shards > 0 and at least one combiner");
                }
            }
            EngineSpec::Sgld { schedule, .. } | EngineSpec::Dsgld { schedule, .. } => {
                schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
            EngineSpec::Axda { shards, rho, .. } => {
                if *shards == 0 || !(*rho > 0.0) {
                    return bad("axda needs shards > 0 and rho > 0");
                }
            }
            EngineSpec::Vb {
                method,
                svi,
                members,
                tol,
                ..
            } => {
                if !(*tol >= 0.0) {
                    return bad("tol must be non-negative");
                }
                match method {
                    VbMethod::Adaptive if members.is_empty() => return bad("adaptive vb needs [[engine.members]]"),
                    VbMethod::Svi => match svi {
                        None => return bad("svi needs an [engine.svi] section"),
                        Some(s) => s.schedule.validate().map_err(|e| Error::Config(e.to_string()))?,
                    },
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub(crate) fn cavi_config(&self, seed: u64) -> Option<CaviConfig> {
        match self {
            EngineSpec::Vb {
                tol,
                max_sweeps,
                random_order,
                ..
            } => Some(CaviConfig {
                tol: *tol,
                max_sweeps: *max_sweeps,
                random_order_seed: random_order.then_some(seed),
            }),
            _ => None,
        }
    }
}
