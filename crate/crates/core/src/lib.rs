//! Flow-assisted MCMC, Bayesian coresets, divide-and-conquer posterior
//! inference and mean-field variational Bayes over a shared model layer.
//!
//! Every engine is checkable at desk scale: conjugate Gaussian models expose
//! closed-form posteriors and evidences ([`model::ConjugateGaussian`]) that
//! the samplers, combiners and variational fits are tested against.

pub mod coreset;
pub mod diagnostics;
pub mod distributed;
pub mod error;
pub mod flow;
pub mod harness;
pub mod mcmc;
pub mod model;
pub mod rng;
pub mod util;
pub mod varinf;

pub use error::{Error, Result};
