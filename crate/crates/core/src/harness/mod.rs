//! Experiment plumbing: config files, output files, reports and dispatch.
//!
//! An experiment is a pure function of its config: all randomness derives
//! from the explicit seeds it contains, and outputs appear only once the
//! whole run has succeeded.

pub mod config;
pub mod io;
pub mod report;
mod run;

pub use config::{BuiltModel, DataSpec, EngineSpec, ExperimentConfig, KernelSpec, ModelSpec};
pub use report::{summarize_chain, summarize_set, Aggregate, ChainMeta, ChainSet, ChainSummary, Report};
pub use run::{diagnose, run_experiment};
