use serde::{Deserialize, Serialize};

use crate::diagnostics::{autocorrelation, effective_sample_size, esjd, gelman_rubin};
use crate::error::{Error, Result};
use crate::mcmc::{acceptance_rate, positions, StepRecord};
use crate::util::{column, mean, variance};

/// Where a set of chains came from; enough to rerun them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub kernel: String,
    pub seed: u64,
    /// Chain `c` used random stream `first_stream + c`.
    pub first_stream: u64,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    pub chains: Vec<Vec<StepRecord>>,
    pub meta: ChainMeta,
}

impl ChainSet {
    pub fn new(chains: Vec<Vec<StepRecord>>, meta: ChainMeta) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::input("chain set is empty"));
        }
        let t = chains[0].len();
        if chains.iter().any(|c| c.len() != t) {
            return Err(Error::input("chains in one set must have equal lengths"));
        }
        Ok(ChainSet { chains, meta })
    }

    pub fn positions(&self) -> Vec<Vec<Vec<f64>>> {
        self.chains.iter().map(|c| positions(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub index: usize,
    pub n_steps: usize,
    pub acceptance_rate: f64,
    pub divergences: usize,
    pub ess: Option<f64>,
    pub lag1_autocorrelation: Option<f64>,
    pub esjd: Option<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Diagnostics that were undefined for this chain, with the reason.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_chains: usize,
    pub r_hat: Option<f64>,
    pub warnings: Vec<String>,
}

/// Metrics document written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub engine: String,
    pub seed: u64,
    pub config: Option<serde_json::Value>,
    pub chains: Vec<ChainSummary>,
    pub aggregate: Aggregate,
    pub metrics: serde_json::Map<String, serde_json::Value>,
    pub files: Vec<String>,
    pub wall_seconds: f64,
}

fn keep<T>(r: Result<T>, what: &str, warnings: &mut Vec<String>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("{what}: {e}"));
            None
        }
    }
}

pub fn summarize_chain(index: usize, records: &[StepRecord]) -> ChainSummary {
    let xs = positions(records);
    let mut warnings = Vec::new();
    let dim = xs.first().map_or(0, Vec::len);
    let (m, v) = if xs.len() >= 2 {
        (0..dim)
            .map(|j| {
                let c = column(&xs, j);
                (mean(&c), variance(&c))
            })
            .unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    ChainSummary {
        index,
        n_steps: records.len(),
        acceptance_rate: acceptance_rate(records),
        divergences: records.iter().filter(|r| r.divergent).count(),
        ess: keep(effective_sample_size(&xs), "ess", &mut warnings),
        lag1_autocorrelation: keep(autocorrelation(&xs, 1), "lag-1 autocorrelation", &mut warnings),
        esjd: keep(esjd(&xs), "esjd", &mut warnings),
        mean: m,
        variance: v,
        warnings,
    }
}

pub fn summarize_set(set: &ChainSet) -> (Vec<ChainSummary>, Aggregate) {
    let summaries = set
        .chains
        .iter()
        .enumerate()
        .map(|(i, c)| summarize_chain(i, c))
        .collect();
    let mut warnings = Vec::new();
    let r_hat = keep(gelman_rubin(&set.positions()), "r_hat", &mut warnings);
    (
        summaries,
        Aggregate {
            n_chains: set.chains.len(),
            r_hat,
            warnings,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, x: f64, accept: bool) -> StepRecord {
        StepRecord {
            step,
            x: vec![x],
            accept,
            log_alpha: 0.0,
            divergent: false,
        }
    }

    #[test]
    fn short_chain_reports_undefined_diagnostics() {
        let c: Vec<_> = (0..10).map(|i| rec(i, i as f64, true)).collect();
        let s = summarize_chain(0, &c);
        assert!(s.ess.is_none());
        assert!(s.esjd.is_some());
        assert!(s.warnings.iter().any(|w| w.starts_with("ess")));
    }

    #[test]
    fn single_chain_has_no_r_hat() {
        let c: Vec<_> = (0..200).map(|i| rec(i, ((i * 7919) % 101) as f64, i % 3 == 0)).collect();
        let set = ChainSet::new(
            vec![c],
            ChainMeta {
                kernel: "test".into(),
                seed: 0,
                first_stream: 1,
                config: None,
            },
        )
        .unwrap();
        let (s, agg) = summarize_set(&set);
        assert!(s[0].ess.is_some());
        assert!(agg.r_hat.is_none());
        assert!(!agg.warnings.is_empty());
    }

    #[test]
    fn unequal_chains_are_rejected() {
        let meta = ChainMeta {
            kernel: "test".into(),
            seed: 0,
            first_stream: 1,
            config: None,
        };
        assert!(ChainSet::new(vec![vec![rec(1, 0.0, true)], vec![]], meta).is_err());
    }
}
