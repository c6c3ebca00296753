use super::Kernel;
use crate::error::{Error, Result};
use crate::flow::ComposedFlow;
use crate::model::Target;
use crate::rng;
use crate::util::sq_dist;

/// Objective used to tune a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// `-E_π log q_φ`, the parameter-dependent part of `KL(π ‖ q_φ)`.
    ForwardKl,
    /// `λ/lag − lag/λ` with `lag` the expected squared jump distance.
    Esjd { lambda: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Esjd { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::input(format!("ESJD scale λ must be positive, got {lambda}")))
            }
            _ => Ok(()),
        }
    }
}

/// Mean of `-log q_φ(x_i)` over the buffer and its parameter gradient.
pub fn forward_kl_loss(flow: &ComposedFlow, buffer: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    flow.param_grad_neg_logdensity(buffer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsjdEstimate {
    /// `(1/S) Σ ‖x_i − x_i'‖² · acc(x_i, x_i')`
    pub lag: f64,
    /// `λ/lag − lag/λ`, or `+∞` when `lag = 0`.
    pub value: f64,
}

impl EsjdEstimate {
    pub fn is_degenerate(&self) -> bool {
        self.lag == 0.0
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn point_key(x: &[f64]) -> u64 {
    x.iter().fold(0x5eed, |h, v| splitmix(h ^ v.to_bits()))
}

/// One proposal per buffer point, weighted by its acceptance probability.
///
/// The random stream of each proposal is keyed by `seed` and the point
/// itself, so the estimate does not depend on buffer order and reuses the
/// same randomness when only the kernel changes.
pub fn esjd_loss(
    kernel: &dyn Kernel,
    target: &dyn Target,
    buffer: &[Vec<f64>],
    lambda: f64,
    seed: u64,
) -> Result<EsjdEstimate> {
    LossSpec::Esjd { lambda }.validate()?;
    if buffer.is_empty() {
        return Err(Error::input("ESJD buffer is empty"));
    }
    let mut total = 0.0;
    for x in buffer {
        let mut r = rng::stream(seed, point_key(x));
        let p = kernel.propose(target, x, target.potential(x), &mut r)?;
        total += sq_dist(x, &p.x) * p.accept_prob();
    }
    let lag = total / buffer.len() as f64;
    let value = if lag == 0.0 {
        f64::INFINITY
    } else {
        lambda / lag - lag / lambda
    };
    Ok(EsjdEstimate { lag, value })
}
