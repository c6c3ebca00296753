use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use super::config::{
    AdaptLoss, BuiltModel, CombinerSpec, CoresetMethod, EngineSpec, ExperimentConfig, KernelSpec, VbMethod,
};
use super::io::{
    model_hash, read_chain_file, stage_worker_draws, write_chain_jsonl, write_coreset_csv, write_draws_csv,
    write_fitted_state_csv, Staging,
};
use super::report::{summarize_set, ChainMeta, ChainSet, Report};
use crate::coreset::{
    exact_gaussian_coreset_kl, optimize_weights, sparse_regression_coreset, uniform_coreset, CoresetBuildConfig,
    CoresetWeights,
};
use crate::diagnostics;
use crate::distributed::{
    axda_gibbs, axda_theta_marginal, consensus_gaussian, dsgld_run, quantile_average, recentered_mixture,
    run_subset_chains, sgld_run, wasserstein_median, AxdaConfig, DsgldConfig, SgldConfig,
};
use crate::error::{Error, Result};
use crate::flow::{read_checkpoint, write_checkpoint, ComposedFlow};
use crate::mcmc::{
    adapt_esjd, adapt_forward_kl, positions, run_chain, sample_tuned, AdaptConfig, AugmentedHmcKernel, ChainState,
    HmcKernel, HmcSampling, IndependentKernel, Kernel, MalaKernel, MixtureKernel, StepRecord, Tunable,
};
use crate::model::{conjugate_posterior, partition, BayesModel, Target, WeightedPotential};
use crate::rng;
use crate::util::{column, mean, variance};
use crate::varinf::{
    adaptive_vb, cavi_fit, elbo, svi_fit, ModelCollection, SviConfig, VbModel,
};

/// Streams reserved for engine-level randomness; chains use `1..`.
const FLOW_INIT_STREAM: u64 = 1 << 20;
const POST_ADAPT_STREAM: u64 = (1 << 20) + 1;
const PRE_ADAPT_STREAM: u64 = (1 << 20) + 2;

macro_rules! with_data_model {
    ($built:expr, $m:ident => $body:expr) => {
        match $built {
            BuiltModel::Location($m) => $body,
            BuiltModel::Linear($m) => $body,
            BuiltModel::Logistic($m) => $body,
            _ => {
                return Err(Error::unsupported(
                    "this engine needs gaussian_location, linear_regression or logistic_regression",
                ))
            }
        }
    };
}

struct Run {
    stage: Staging,
    metrics: Map<String, Value>,
    chains: Option<ChainSet>,
}

impl Run {
    fn put(&mut self, key: &str, value: Value) {
        self.metrics.insert(key.to_string(), value);
    }

    fn stage_chain(&mut self, c: usize, records: &[StepRecord]) -> Result<()> {
        write_chain_jsonl(records, self.stage.create(&format!("chain_{c}.jsonl"))?)?;
        write_draws_csv(&positions(records), self.stage.create(&format!("draws_{c}.csv"))?)
    }

    fn stage_series(&mut self, name: &str, header: &str, values: &[f64]) -> Result<()> {
        let mut w = self.stage.create(name)?;
        writeln!(w, "index,{header}")?;
        for (i, v) in values.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the configured engine and writes its outputs plus `report.json`
/// into `out`. Nothing is written unless the whole run succeeds.
pub fn run_experiment(cfg: &ExperimentConfig, out: impl AsRef<Path>) -> Result<Report> {
    cfg.validate()?;
    let started = Instant::now();
    let mut run = Run {
        stage: Staging::new(out.as_ref())?,
        metrics: Map::new(),
        chains: None,
    };
    match &cfg.engine {
        EngineSpec::Sample { .. } => run_sample(cfg, &mut run)?,
        EngineSpec::Adapt { .. } => run_adapt(cfg, &mut run)?,
        EngineSpec::Coreset { .. } => run_coreset(cfg, &mut run)?,
        EngineSpec::Distribute { .. } => run_distribute(cfg, &mut run)?,
        EngineSpec::Sgld { .. } | EngineSpec::Dsgld { .. } => run_sgld(cfg, &mut run)?,
        EngineSpec::Axda { .. } => run_axda(cfg, &mut run)?,
        EngineSpec::Vb { .. } => run_vb(cfg, &mut run)?,
    }
    let (chains, aggregate) = match &run.chains {
        Some(set) => summarize_set(set),
        None => (
            Vec::new(),
            super::report::Aggregate {
                n_chains: 0,
                r_hat: None,
                warnings: Vec::new(),
            },
        ),
    };
    let mut files = run.stage.files().to_vec();
    files.push("report.json".into());
    let report = Report {
        name: cfg.name.clone(),
        engine: cfg.engine_kind().to_string(),
        seed: cfg.seed,
        config: Some(serde_json::to_value(cfg)?),
        chains,
        aggregate,
        metrics: run.metrics,
        files,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let mut stage = run.stage;
    stage.write("report.json", &serde_json::to_vec_pretty(&report)?)?;
    stage.commit()?;
    Ok(report)
}

fn build_kernel(spec: &KernelSpec, dim: usize) -> Result<Box<dyn Kernel>> {
    let load = |p: &Path| -> Result<ComposedFlow> {
        let flow = read_checkpoint(std::fs::File::open(p)?)?;
        if flow.dim() != dim {
            return Err(Error::Config(format!("checkpoint has dimension {}, target has {dim}", flow.dim())));
        }
        Ok(flow)
    };
    Ok(match spec {
        KernelSpec::Hmc { eps, n_leapfrog } => Box::new(HmcKernel::new(*eps, *n_leapfrog)?),
        KernelSpec::Mala { eps } => Box::new(MalaKernel::new(*eps)?),
        KernelSpec::AugmentedHmc { eps, n_leapfrog } => {
            Box::new(AugmentedHmcKernel::zero(HmcKernel::new(*eps, *n_leapfrog)?, dim))
        }
        KernelSpec::Independent { checkpoint } => Box::new(IndependentKernel::new(load(checkpoint)?)),
        KernelSpec::Mixture {
            checkpoint,
            local_eps,
            local_per_global,
        } => Box::new(MixtureKernel::new(
            MalaKernel::new(*local_eps)?,
            IndependentKernel::new(load(checkpoint)?),
            *local_per_global,
        )?),
    })
}

fn run_sample(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let EngineSpec::Sample {
        kernel,
        steps,
        burn_in,
        chains,
        init,
    } = &cfg.engine
    else {
        unreachable!()
    };
    let built = cfg.model()?.build()?;
    let target = built.target()?;
    let dim = target.dim();
    let k = build_kernel(kernel, dim)?;
    let starts: Vec<Vec<f64>> = match init {
        Some(i) => i.clone(),
        None => vec![vec![0.0; dim]; *chains],
    };
    let records: Vec<Vec<StepRecord>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(c, x0)| {
            let mut state = ChainState::new(target.as_ref(), x0, cfg.seed, c as u64 + 1)?;
            run_chain(&k, target.as_ref(), &mut state, *burn_in)?;
            run_chain(&k, target.as_ref(), &mut state, *steps)
        })
        .collect::<Result<_>>()?;
    for (c, r) in records.iter().enumerate() {
        run.stage_chain(c, r)?;
    }
    run.chains = Some(ChainSet::new(
        records,
        ChainMeta {
            kernel: serde_json::to_string(kernel)?,
            seed: cfg.seed,
            first_stream: 1,
            config: None,
        },
    )?);
    Ok(())
}

fn realized_esjd<K: Kernel + ?Sized>(kernel: &K, target: &dyn Target, x0: &[f64], steps: usize, seed: u64, stream: u64) -> Result<(Vec<StepRecord>, f64)> {
    let mut state = ChainState::new(target, x0.to_vec(), seed, stream)?;
    let rec = run_chain(kernel, target, &mut state, steps)?;
    let value = diagnostics::esjd(&positions(&rec))?;
    Ok((rec, value))
}

fn run_adapt(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let EngineSpec::Adapt {
        loss,
        lambda,
        layers,
        init_scale,
        walkers,
        rounds,
        steps_per_round,
        batch_size,
        learning_rate,
        local_eps,
        n_leapfrog,
        local_per_global,
        sample_steps,
    } = &cfg.engine
    else {
        unreachable!()
    };
    let built = cfg.model()?.build()?;
    let target = built.target()?;
    let dim = target.dim();
    if walkers.iter().any(|w| w.len() != dim) {
        return Err(Error::Config(format!("walker starts must have dimension {dim}")));
    }
    let acfg = AdaptConfig {
        rounds: *rounds,
        steps_per_round: *steps_per_round,
        batch_size: *batch_size,
        learning_rate: *learning_rate,
        seed: cfg.seed,
        ..AdaptConfig::default()
    };
    let chain = match loss {
        AdaptLoss::ForwardKl => {
            let flow = ComposedFlow::random(dim, *layers, *init_scale, &mut rng::stream(cfg.seed, FLOW_INIT_STREAM));
            let mala = MalaKernel::new(*local_eps)?;
            let out = adapt_forward_kl(flow, target.as_ref(), Some(&mala), *local_per_global, walkers, &acfg)?;
            write_checkpoint(&out.kernel, run.stage.create("flow.ckpt")?)?;
            run.stage_series("loss_trace.csv", "loss", &out.loss_trace)?;
            run.put("final_loss", json!(out.loss_trace.last()));
            let kernel = MixtureKernel::new(mala, IndependentKernel::new(out.kernel), *local_per_global)?;
            let (rec, value) = realized_esjd(&kernel, target.as_ref(), &walkers[0], *sample_steps, cfg.seed, POST_ADAPT_STREAM)?;
            run.put("esjd_after", json!(value));
            rec
        }
        AdaptLoss::Esjd => {
            let lambda = lambda.expect("validated");
            let kernel = AugmentedHmcKernel::zero(HmcKernel::new(*local_eps, *n_leapfrog)?, dim);
            let (_, before) = realized_esjd(&kernel, target.as_ref(), &walkers[0], *sample_steps, cfg.seed, PRE_ADAPT_STREAM)?;
            let out = adapt_esjd(kernel, target.as_ref(), lambda, walkers, &acfg)?;
            run.stage_series("loss_trace.csv", "loss", &out.loss_trace)?;
            run.stage.write("kernel_params.json", &serde_json::to_vec(&out.kernel.tunable_params())?)?;
            let (rec, after) = realized_esjd(&out.kernel, target.as_ref(), &walkers[0], *sample_steps, cfg.seed, POST_ADAPT_STREAM)?;
            run.put("esjd_before", json!(before));
            run.put("esjd_after", json!(after));
            run.put("esjd_ratio", json!(after / before));
            rec
        }
    };
    run.stage_chain(0, &chain)?;
    run.chains = Some(ChainSet::new(
        vec![chain],
        ChainMeta {
            kernel: format!("adapted ({loss:?})"),
            seed: cfg.seed,
            first_stream: POST_ADAPT_STREAM,
            config: None,
        },
    )?);
    Ok(())
}

fn run_coreset(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let EngineSpec::Coreset {
        method,
        budget,
        n_draws,
        n_opt_steps,
        step_size,
        optimizer,
        n_leapfrog,
        burn_in,
    } = &cfg.engine
    else {
        unreachable!()
    };
    let spec = cfg.model()?;
    let built = spec.build()?;
    let model = built
        .bayes()
        .ok_or_else(|| Error::unsupported("coresets need a data model"))?;
    let build_cfg = CoresetBuildConfig {
        budget: *budget,
        n_draws: *n_draws,
        n_opt_steps: *n_opt_steps,
        step_size: *step_size,
        optimizer: (*optimizer).into(),
        n_leapfrog: *n_leapfrog,
        burn_in: *burn_in,
        seed: cfg.seed,
    };
    let weights: CoresetWeights = match method {
        CoresetMethod::Uniform => uniform_coreset(model, *budget, cfg.seed)?,
        CoresetMethod::SparseRegression => {
            let sampling = HmcSampling {
                n_leapfrog: *n_leapfrog,
                burn_in: *burn_in,
                n_draws: *n_draws,
                ..HmcSampling::default()
            };
            let post = WeightedPotential::posterior(model);
            let draws = sample_tuned(&post, vec![0.0; model.dim()], &sampling, cfg.seed, 1)?;
            let fit = sparse_regression_coreset(model, *budget, &draws.draws)?;
            run.put("regression_residual", json!(fit.residual));
            fit.weights
        }
        CoresetMethod::Optimized => {
            let init = uniform_coreset(model, *budget, cfg.seed)?;
            let out = optimize_weights(model, &init, &build_cfg)?;
            if !out.kl_trace.is_empty() {
                run.stage_series("kl_trace.csv", "kl", &out.kl_trace)?;
            }
            run.stage_series("grad_norm_trace.csv", "grad_norm", &out.grad_norm_trace)?;
            out.weights
        }
    };
    let hash = model_hash(spec, &built)?;
    write_coreset_csv(&weights, &hash, run.stage.create("coreset.csv")?)?;
    run.put("n", json!(weights.n()));
    run.put("m", json!(weights.size()));
    run.put("model_hash", json!(hash));
    if model.conjugate().is_some() {
        run.put("kl_to_posterior", json!(exact_gaussian_coreset_kl(model, weights.weights())?));
    }
    Ok(())
}

fn moments(draws: &[Vec<f64>]) -> Value {
    let dim = draws.first().map_or(0, Vec::len);
    let m: Vec<f64> = (0..dim).map(|j| mean(&column(draws, j))).collect();
    let v: Vec<f64> = (0..dim).map(|j| variance(&column(draws, j))).collect();
    json!({ "mean": m, "variance": v })
}

fn exact_moments(model: &dyn BayesModel) -> Option<Value> {
    let post = conjugate_posterior(model).ok()?;
    let m: Vec<f64> = post.mean().iter().copied().collect();
    let v: Vec<f64> = post.cov().diagonal().iter().copied().collect();
    Some(json!({ "mean": m, "variance": v }))
}

fn data_of(built: &BuiltModel) -> Result<&crate::model::Dataset> {
    built
        .bayes()
        .map(|m| m.dataset())
        .ok_or_else(|| Error::unsupported("this engine needs a data model"))
}

fn run_distribute(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let EngineSpec::Distribute {
        shards,
        mode,
        combiners,
        n_draws,
        burn_in,
        n_leapfrog,
        quantile_grid,
    } = &cfg.engine
    else {
        unreachable!()
    };
    let built = cfg.model()?.build()?;
    let parts = partition(data_of(&built)?, *shards, cfg.seed)?;
    let sampling = HmcSampling {
        n_leapfrog: *n_leapfrog,
        burn_in: *burn_in,
        n_draws: *n_draws,
        ..HmcSampling::default()
    };
    let seeds: Vec<u64> = (0..*shards as u64).map(|j| cfg.seed.wrapping_add(j + 1)).collect();
    let draws = with_data_model!(&built, m => run_subset_chains(m, &parts, *mode, &sampling, &seeds)?);
    stage_worker_draws(&mut run.stage, &draws)?;
    let grid: Vec<f64> = (1..=*quantile_grid).map(|i| i as f64 / (*quantile_grid + 1) as f64).collect();
    for c in combiners {
        match c {
            CombinerSpec::Consensus => {
                let combined = consensus_gaussian(&draws)?;
                write_draws_csv(&combined, run.stage.create("combined_consensus.csv")?)?;
                run.put("consensus", moments(&combined));
            }
            CombinerSpec::Recentered => {
                let mix = recentered_mixture(&draws)?;
                let mut w = csv::Writer::from_writer(run.stage.create("combined_recentered.csv")?);
                let dim = draws.dim();
                let mut header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
                header.push("weight".into());
                w.write_record(&header)?;
                for a in &mix.atoms {
                    let mut row: Vec<String> = a.iter().map(|v| v.to_string()).collect();
                    row.push(mix.atom_weight.to_string());
                    w.write_record(&row)?;
                }
                w.flush()?;
                run.put("recentered", moments(&mix.atoms));
            }
            CombinerSpec::QuantileAverage => {
                let q = quantile_average(&draws.draws, &grid)?;
                write_quantiles(run, "combined_quantile_average.csv", &grid, &q)?;
            }
            CombinerSpec::WassersteinMedian => {
                let fit = wasserstein_median(&draws.draws, &grid)?;
                write_quantiles(run, "combined_wasserstein_median.csv", &grid, &fit.quantiles)?;
                run.put("median_weights", json!(fit.weights));
                run.put("median_iterations", json!(fit.iterations));
            }
        }
    }
    if let Some(m) = built.bayes().and_then(exact_moments) {
        run.put("exact_posterior", m);
    }
    run.put("worker_seed_inits", json!(draws.audit.seed_inits));
    Ok(())
}

fn write_quantiles(run: &mut Run, name: &str, grid: &[f64], q: &[f64]) -> Result<()> {
    let mut w = run.stage.create(name)?;
    writeln!(w, "alpha,quantile")?;
    for (a, v) in grid.iter().zip(q) {
        writeln!(w, "{a},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn run_sgld(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let built = cfg.model()?.build()?;
    let model = built
        .bayes()
        .ok_or_else(|| Error::unsupported("stochastic-gradient engines need a data model"))?;
    let init = vec![0.0; model.dim()];
    let chain = match &cfg.engine {
        EngineSpec::Sgld {
            batch_size,
            schedule,
            steps,
        } => sgld_run(
            model,
            &init,
            &SgldConfig {
                batch_size: *batch_size,
                schedule: *schedule,
                steps: *steps,
            },
            cfg.seed,
        )?,
        EngineSpec::Dsgld {
            shards,
            batch_size,
            block_len,
            schedule,
            steps,
        } => {
            let parts = partition(model.dataset(), *shards, cfg.seed)?;
            let n = model.n_data() as f64;
            let dcfg = DsgldConfig {
                p: parts.iter().map(|s| s.n_obs() as f64 / n).collect(),
                batch_size: *batch_size,
                block_len: *block_len,
                schedule: *schedule,
                steps: *steps,
            };
            let out = with_data_model!(&built, m => dsgld_run(m, &parts, &init, &dcfg, cfg.seed)?);
            run.put("visits", json!(out.visits));
            run.put("communications", json!(out.communications));
            out.chain
        }
        _ => unreachable!(),
    };
    write_draws_csv(&chain, run.stage.create("chain.csv")?)?;
    let tail = &chain[chain.len() / 2..];
    run.put("second_half", moments(tail));
    if let Some(m) = exact_moments(model) {
        run.put("exact_posterior", m);
    }
    Ok(())
}

fn run_axda(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let EngineSpec::Axda {
        shards,
        rho,
        iters,
        burn_in,
    } = &cfg.engine
    else {
        unreachable!()
    };
    let built = cfg.model()?.build()?;
    let BuiltModel::Location(model) = &built else {
        return Err(Error::unsupported("AXDA is implemented for the Gaussian location model"));
    };
    let parts = partition(model.dataset(), *shards, cfg.seed)?;
    let chain = axda_gibbs(
        model,
        &parts,
        &AxdaConfig {
            rho: *rho,
            iters: *iters,
            seed: cfg.seed,
            update_order: None,
        },
    )?;
    if *burn_in >= chain.theta.len() {
        return Err(Error::Config("burn_in must be shorter than the chain".into()));
    }
    write_draws_csv(&chain.theta, run.stage.create("theta.csv")?)?;
    run.put("theta", moments(&chain.theta[*burn_in..]));
    let marginal = axda_theta_marginal(model, &parts, *rho)?;
    run.put(
        "theta_marginal",
        json!({
            "mean": marginal.mean().iter().copied().collect::<Vec<f64>>(),
            "variance": marginal.cov().diagonal().iter().copied().collect::<Vec<f64>>(),
        }),
    );
    if let Some(m) = exact_moments(model) {
        run.put("exact_posterior", m);
    }
    Ok(())
}

fn run_vb(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let EngineSpec::Vb {
        method, svi, members, ..
    } = &cfg.engine
    else {
        unreachable!()
    };
    let cavi_cfg = cfg.engine.cavi_config(cfg.seed).expect("vb engine");
    match method {
        VbMethod::Cavi | VbMethod::Svi => {
            let model = cfg.model()?.build()?.vb()?;
            let state = if *method == VbMethod::Cavi {
                cavi_fit(model.as_ref(), &model.prior_state(), &cavi_cfg)?
            } else {
                let s = svi.as_ref().expect("validated");
                let out = svi_fit(
                    model.as_ref(),
                    &model.prior_state(),
                    &SviConfig {
                        batch_size: s.batch_size,
                        schedule: s.schedule,
                        iters: s.iters,
                        seed: cfg.seed,
                    },
                )?;
                run.put("projections", json!(out.projections));
                out.state
            };
            write_fitted_state_csv(&state, run.stage.create("fitted_state.csv")?)?;
            run.stage_series("elbo_trace.csv", "elbo", &state.elbo_trace)?;
            run.put("elbo", json!(elbo(model.as_ref(), &state)?));
            run.put("log_evidence", json!(model.log_evidence()));
            run.put("factors", serde_json::to_value(&state.factors)?);
        }
        VbMethod::Adaptive => {
            let models = members
                .iter()
                .map(|m| Ok((m.model.build()?.vb()?, m.alpha)))
                .collect::<Result<Vec<(Box<dyn VbModel>, f64)>>>()?;
            let collection = ModelCollection::new(models)?;
            let result = adaptive_vb(&collection, &cavi_cfg, cfg.seed)?;
            let mut w = run.stage.create("weights.csv")?;
            writeln!(w, "model,alpha,psi,weight")?;
            for (m, ((a, p), g)) in collection
                .prior_weights()
                .iter()
                .zip(&result.psi)
                .zip(&result.weights)
                .enumerate()
            {
                writeln!(w, "{m},{a},{p},{g}")?;
            }
            w.flush()?;
            drop(w);
            for (m, fit) in result.fits.iter().enumerate() {
                write_fitted_state_csv(fit, run.stage.create(&format!("fitted_state_{m}.csv"))?)?;
            }
            run.put("weights", json!(result.weights));
            run.put("psi", json!(result.psi));
            run.put("best", json!(result.best()));
        }
    }
    Ok(())
}

/// Diagnostics for existing chain files, written to `out/report.json`.
pub fn diagnose(paths: &[impl AsRef<Path>], out: impl AsRef<Path>) -> Result<Report> {
    let started = Instant::now();
    let chains = paths.iter().map(read_chain_file).collect::<Result<Vec<_>>>()?;
    let set = ChainSet::new(
        chains,
        ChainMeta {
            kernel: "unknown".into(),
            seed: 0,
            first_stream: 0,
            config: None,
        },
    )?;
    let (chains, aggregate) = summarize_set(&set);
    let mut metrics = Map::new();
    metrics.insert(
        "sources".into(),
        json!(paths.iter().map(|p| p.as_ref().display().to_string()).collect::<Vec<_>>()),
    );
    let report = Report {
        name: "diagnose".into(),
        engine: "diagnose".into(),
        seed: 0,
        config: None,
        chains,
        aggregate,
        metrics,
        files: vec!["report.json".into()],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let mut stage = Staging::new(out.as_ref())?;
    stage.write("report.json", &serde_json::to_vec_pretty(&report)?)?;
    stage.commit()?;
    Ok(report)
}
