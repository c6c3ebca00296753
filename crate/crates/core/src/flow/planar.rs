use crate::util::{dot, norm_sq, sigmoid, softplus};

/// Smallest admissible `w'â`; below it the layer stops being invertible.
pub const INVERTIBILITY_MARGIN: f64 = -1.0 + 1e-6;

/// One planar layer `z ↦ z + a·tanh(w'z + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarLayer {
    pub a: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

/// `m(x) = -1 + log(1 + e^x)`, mapping the real line onto `(-1, ∞)`.
fn constraint_map(x: f64) -> f64 {
    -1.0 + softplus(x)
}

impl PlanarLayer {
    pub fn new(a: Vec<f64>, w: Vec<f64>, b: f64) -> Self {
        assert_eq!(a.len(), w.len(), "a and w must share a dimension");
        PlanarLayer { a, w, b }
    }

    pub fn identity(dim: usize) -> Self {
        PlanarLayer::new(vec![0.0; dim], vec![0.0; dim], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn is_invertible(&self) -> bool {
        dot(&self.w, &self.a) >= INVERTIBILITY_MARGIN
    }

    /// The scale vector used at evaluation. Raw parameters satisfying the
    /// invertibility condition are used as-is; violating ones go through
    /// [`project_invertible`]. The flag reports which branch was taken.
    pub fn effective_scale(&self) -> (Vec<f64>, bool) {
        if self.is_invertible() {
            (self.a.clone(), false)
        } else {
            (project_invertible(self).a, true)
        }
    }

    /// Pulls a gradient taken with respect to the effective scale back onto
    /// the raw `(a, w)` when the layer was projected. `grad_w` must already
    /// hold the explicit `w` contribution.
    pub(crate) fn pull_back_projection(
        &self,
        grad_scale: &[f64],
        grad_a: &mut [f64],
        grad_w: &mut [f64],
    ) {
        let ww = norm_sq(&self.w);
        let s = dot(&self.w, &self.a);
        let m = constraint_map(s);
        let dm = sigmoid(s);
        let c = (m - s) / ww;
        let gw = dot(grad_scale, &self.w);
        for i in 0..self.dim() {
            grad_a[i] = grad_scale[i] + gw * (dm - 1.0) / ww * self.w[i];
            grad_w[i] += c * grad_scale[i]
                + gw * ((dm - 1.0) * self.a[i] / ww - 2.0 * (m - s) * self.w[i] / (ww * ww));
        }
    }
}

/// Reparameterizes `a` so that `w'â = m(w'a) > -1`:
/// `â = a + (m(w'a) - w'a)·w/‖w‖²`. A layer with `w = 0` is returned unchanged.
pub fn project_invertible(layer: &PlanarLayer) -> PlanarLayer {
    let ww = norm_sq(&layer.w);
    if ww == 0.0 {
        return layer.clone();
    }
    let s = dot(&layer.w, &layer.a);
    let c = (constraint_map(s) - s) / ww;
    let a = layer
        .a
        .iter()
        .zip(&layer.w)
        .map(|(ai, wi)| ai + c * wi)
        .collect();
    PlanarLayer::new(a, layer.w.clone(), layer.b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_of_orthogonal_layer_hits_m_of_zero() {
        let l = PlanarLayer::new(vec![1.0, 0.0], vec![0.0, 2.0], 0.3);
        let p = project_invertible(&l);
        let expect = -1.0 + 2f64.ln();
        assert!((dot(&p.w, &p.a) - expect).abs() < 1e-14);
        assert!((expect + 0.3069).abs() < 1e-4);
    }

    #[test]
    fn projection_repairs_violating_layers() {
        let mut rng = crate::rng::seeded(5);
        for _ in 0..200 {
            let w = crate::rng::normal_vec(&mut rng, 3);
            let mut a = crate::rng::normal_vec(&mut rng, 3);
            // force w'a = -5
            let s = dot(&w, &a);
            let ww = norm_sq(&w);
            for i in 0..3 {
                a[i] += (-5.0 - s) * w[i] / ww;
            }
            let l = PlanarLayer::new(a, w, 0.0);
            assert!(!l.is_invertible());
            let p = project_invertible(&l);
            assert!(dot(&p.w, &p.a) >= -1.0);
            assert!(l.effective_scale().1);
        }
    }

    #[test]
    fn zero_direction_is_left_alone() {
        let l = PlanarLayer::new(vec![3.0], vec![0.0], 1.0);
        assert_eq!(project_invertible(&l), l);
    }

    #[test]
    fn valid_layers_evaluate_unprojected() {
        let l = PlanarLayer::new(vec![1.0], vec![1.0], 0.0);
        assert_eq!(l.effective_scale(), (vec![1.0], false));
    }
}
