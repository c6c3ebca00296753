use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bayescomp::harness::{diagnose, run_experiment, ExperimentConfig, Report};
use bayescomp::Error;

#[derive(Parser)]
#[command(name = "bayescomp", version, about = "Flow-assisted MCMC, coresets, distributed posteriors and variational Bayes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run MCMC chains with a fixed kernel.
    Sample(Common),
    /// Adapt a flow or an augmented HMC kernel, then sample with it.
    Adapt(Common),
    /// Build a coreset.
    Coreset(Common),
    /// Subset posteriors and combiners, SGLD, DSGLD or AXDA.
    Distribute(Common),
    /// Mean-field variational Bayes.
    Vb(Common),
    /// Diagnostics for existing chain files.
    Diagnose {
        /// Chain files (JSONL), one per chain.
        #[arg(long, num_args = 1.., required = true)]
        chains: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn set_threads(n: Option<usize>) -> Result<(), Error> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(command: &str, args: Common) -> Result<Report, Error> {
    set_threads(args.threads)?;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.engine.command() != command {
        return Err(Error::Config(format!(
            "config describes a {:?} engine, which runs under `{}`, not `{command}`",
            cfg.engine_kind(),
            cfg.engine.command()
        )));
    }
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output`".into()))?;
    run_experiment(&cfg, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => run("sample", a),
        Command::Adapt(a) => run("adapt", a),
        Command::Coreset(a) => run("coreset", a),
        Command::Distribute(a) => run("distribute", a),
        Command::Vb(a) => run("vb", a),
        Command::Diagnose { chains, out, threads } => set_threads(threads).and_then(|_| diagnose(&chains, out)),
    };
    match result {
        Ok(report) => {
            let line = json!({
                "status": "ok",
                "engine": report.engine,
                "files": report.files,
                "wall_seconds": report.wall_seconds,
            });
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "kind": e.kind(), "message": e.to_string() }));
            match e {
                Error::Config(_) | Error::Input(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
