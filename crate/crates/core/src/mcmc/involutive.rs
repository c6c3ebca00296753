use rand::Rng as _;

use super::{Kernel, Proposal};
use crate::error::{Error, Result};
use crate::flow::{ComposedFlow, PlanarLayer};
use crate::model::Target;
use crate::rng::{self, Rng};
use crate::util::norm_sq;

const VOLUME_TOL: f64 = 1e-8;
const N_PROBES: usize = 32;

/// Dependent proposals from a volume-preserving flow on `(x, z) ∈ R^{D+M}`.
///
/// Each step draws `z ~ N(0, I_M)` and applies `f` or `f⁻¹` with equal
/// probability; the pair of moves is its own reverse, and the move is
/// accepted against the joint density `π(x) N(z)`.
#[derive(Debug, Clone)]
pub struct InvolutiveKernel {
    flow: ComposedFlow,
    dim_x: usize,
}

impl InvolutiveKernel {
    pub fn new(flow: ComposedFlow, dim_x: usize) -> Result<Self> {
        if dim_x == 0 || dim_x > flow.dim() {
            return Err(Error::Config(format!(
                "flow of dimension {} cannot act on a {dim_x}-dimensional target",
                flow.dim()
            )));
        }
        let mut probe_rng = rng::seeded(0x1f0e);
        for _ in 0..N_PROBES {
            let p: Vec<f64> = rng::normal_vec(&mut probe_rng, flow.dim()).iter().map(|v| 2.0 * v).collect();
            let (_, logdet) = flow.forward(&p)?;
            if logdet.abs() > VOLUME_TOL {
                return Err(Error::Config(format!(
                    "involutive kernel needs a volume-preserving flow, found |log det| = {:.3e}",
                    logdet.abs()
                )));
            }
        }
        Ok(InvolutiveKernel { flow, dim_x })
    }

    pub fn flow(&self) -> &ComposedFlow {
        &self.flow
    }

    pub fn dim_aux(&self) -> usize {
        self.flow.dim() - self.dim_x
    }
}

/// Alternating shears: odd layers move `x` by a function of `z`, even layers
/// move `z` by a function of `x`. Since `a` and `w` never overlap, `w'a = 0`
/// and every layer preserves volume.
pub fn shear_flow(dim_x: usize, dim_aux: usize, n_layers: usize, scale: f64, rng: &mut Rng) -> Result<ComposedFlow> {
    let d = dim_x + dim_aux;
    let layers = (0..n_layers)
        .map(|i| {
            let mut a = vec![0.0; d];
            let mut w = vec![0.0; d];
            let (a_range, w_range) = if i % 2 == 0 {
                (0..dim_x, dim_x..d)
            } else {
                (dim_x..d, 0..dim_x)
            };
            for j in a_range {
                a[j] = scale * rng::normal(rng);
            }
            for j in w_range {
                w[j] = rng::normal(rng);
            }
            PlanarLayer::new(a, w, 0.5 * rng::normal(rng))
        })
        .collect();
    ComposedFlow::new(d, layers)
}

impl Kernel for InvolutiveKernel {
    fn propose(&self, target: &dyn Target, x: &[f64], potential: f64, rng: &mut Rng) -> Result<Proposal> {
        let z = rng::normal_vec(rng, self.dim_aux());
        let use_forward = rng.random::<f64>() > 0.5;
        let mut point = x.to_vec();
        point.extend_from_slice(&z);
        let (image, log_jac) = if use_forward {
            self.flow.forward(&point)?
        } else {
            let pre = self.flow.inverse(&point)?;
            let (_, ld) = self.flow.forward(&pre)?;
            (pre, -ld)
        };
        let (x1, z1) = image.split_at(self.dim_x);
        let u1 = target.potential(x1);
        let log_alpha = (potential + 0.5 * norm_sq(&z)) - (u1 + 0.5 * norm_sq(z1)) + log_jac;
        if !log_alpha.is_finite() {
            return Ok(Proposal::divergent(x, potential));
        }
        Ok(Proposal {
            x: x1.to_vec(),
            potential: u1,
            log_alpha,
            divergent: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMixture;

    #[test]
    fn rejects_volume_changing_flows() {
        let f = ComposedFlow::new(2, vec![PlanarLayer::new(vec![1.0, 0.0], vec![1.0, 0.0], 0.0)]).unwrap();
        assert!(matches!(InvolutiveKernel::new(f, 1), Err(Error::Config(_))));
        let s = shear_flow(1, 1, 4, 1.0, &mut rng::seeded(2)).unwrap();
        assert!(InvolutiveKernel::new(s, 1).is_ok());
    }

    #[test]
    fn identity_flow_never_moves() {
        let t = GaussianMixture::standard_normal(1);
        let k = InvolutiveKernel::new(ComposedFlow::identity(2, 2), 1).unwrap();
        let mut r = rng::seeded(1);
        for _ in 0..20 {
            let p = k.propose(&t, &[0.7], t.potential(&[0.7]), &mut r).unwrap();
            assert_eq!(p.x, vec![0.7]);
        }
    }
}
