use super::FlowField;
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::tensor::{Scalar, Tensor};

/// Huber threshold δ applied to the flow gradient.
pub const DEFAULT_DELTA: f64 = 1e-3;
/// Weight of the smoothness term relative to the data term.
pub const DEFAULT_WEIGHT: f64 = 1e-2;

/// `½a²` for `|a| ≤ δ`, `δ(|a| − ½δ)` otherwise.
pub fn huber<T: Scalar>(a: T, delta: T) -> T {
    let half = T::from_f64_lossy(0.5);
    if a.abs() <= delta {
        half * a * a
    } else {
        delta * (a.abs() - half * delta)
    }
}

/// `a` for `|a| ≤ δ`, `δ·sign(a)` otherwise.
pub fn huber_derivative<T: Scalar>(a: T, delta: T) -> T {
    if a.abs() <= delta {
        a
    } else {
        delta * a.signum()
    }
}

/// Spatial gradient of a flow field by central differences
/// (`½(f[x+1] − f[x−1])`, borders replicated). Output channels:
/// `∂t_x/∂x, ∂t_x/∂y, ∂t_y/∂x, ∂t_y/∂y`.
pub fn flow_gradient<T: Scalar>(flow: &FlowField<T>) -> Tensor<T> {
    let (h, w) = (flow.height(), flow.width());
    let half = T::from_f64_lossy(0.5);
    let mut out = Tensor::zeros(&[4, h, w]);
    for (comp, src) in [flow.tx(), flow.ty()].into_iter().enumerate() {
        for y in 0..h {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let dx = half * (src[y * w + xr] - src[y * w + xl]);
                let dy = half * (src[yd * w + x] - src[yu * w + x]);
                out.data_mut()[(2 * comp * h + y) * w + x] = dx;
                out.data_mut()[((2 * comp + 1) * h + y) * w + x] = dy;
            }
        }
    }
    out
}

/// Adjoint of [`flow_gradient`]: maps a `4 × h × w` gradient back onto the
/// `2 × h × w` flow.
pub fn flow_gradient_adjoint<T: Scalar>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let s = grad.shape();
    if s.len() != 3 || s[0] != 4 {
        return Err(Error::shape("flow gradient", "4×h×w", s));
    }
    let (h, w) = (s[1], s[2]);
    let half = T::from_f64_lossy(0.5);
    let mut out = Tensor::zeros(&[2, h, w]);
    for comp in 0..2 {
        let gx = grad.channel(2 * comp);
        let gy = grad.channel(2 * comp + 1);
        let dst = out.channel_mut(comp);
        for y in 0..h {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let a = half * gx[y * w + x];
                dst[y * w + xr] += a;
                dst[y * w + xl] -= a;
                let b = half * gy[y * w + x];
                dst[yd * w + x] += b;
                dst[yu * w + x] -= b;
            }
        }
    }
    Ok(out)
}

/// Mean of `|∂t/∂·|` over all four gradient channels.
pub fn mean_abs_flow_gradient<T: Scalar>(flow: &FlowField<T>) -> f64 {
    let g = flow_gradient(flow);
    g.data().iter().map(|v| v.abs().to_f64().unwrap_or(f64::NAN)).sum::<f64>() / g.len() as f64
}

/// Smoothness injector. The forward pass is the identity on the flow; the
/// backward pass adds `weight · ∂/∂flow Σ H_δ(∇flow)` to the incoming gradient.
#[derive(Clone, Debug)]
pub struct HuberPenalty<T> {
    delta: T,
    weight: T,
    flows: Vec<Tensor<T>>,
}

impl<T: Scalar> HuberPenalty<T> {
    pub fn new(delta: f64, weight: f64) -> Self {
        HuberPenalty {
            delta: T::from_f64_lossy(delta),
            weight: T::from_f64_lossy(weight),
            flows: Vec::new(),
        }
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn set_weight(&mut self, weight: f64) {
        self.weight = T::from_f64_lossy(weight);
    }

    /// Unweighted `Σ_ij H_δ(a_ij)` over the flow gradient.
    pub fn penalty(&self, flow: &FlowField<T>) -> T {
        flow_gradient(flow).data().iter().map(|&a| huber(a, self.delta)).sum()
    }

    /// Gradient of `weight · penalty` with respect to the flow.
    pub fn penalty_gradient(&self, flow: &FlowField<T>) -> Tensor<T> {
        let delta = self.delta;
        let d = flow_gradient(flow).map(|a| huber_derivative(a, delta));
        let mut g = flow_gradient_adjoint(&d).expect("4-channel gradient");
        g.scale(self.weight);
        g
    }
}

impl<T: Scalar> Layer<T> for HuberPenalty<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        FlowField::new(input.clone())?;
        self.flows.push(input.clone());
        Ok(input.clone())
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let flow = FlowField::new(self.flows.pop().ok_or(Error::NoCache("huber penalty"))?)?;
        grad_out.expect_shape("huber penalty grad_out", flow.as_tensor().shape())?;
        if self.weight == T::zero() {
            return Ok(grad_out.clone());
        }
        let mut g = self.penalty_gradient(&flow);
        g.add_assign(grad_out);
        Ok(g)
    }

    fn clear_cache(&mut self) {
        self.flows.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, Checkable, GradCheckConfig};
    use crate::nn::init;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn tabulated_values() {
        let d = DEFAULT_DELTA;
        assert_eq!(huber(0.0, d), 0.0);
        assert_eq!(huber_derivative(0.0, d), 0.0);
        assert!(rel(huber(5e-4, d), 1.25e-7) <= 1e-12);
        assert!(rel(huber(0.01, d), 9.5e-6) <= 1e-12);
        assert!(rel(huber_derivative(-0.01, d), -1e-3) <= 1e-12);
    }

    #[test]
    fn constant_flow_has_zero_gradient() {
        let flow = FlowField::constant(1.5f64, -0.25, 5, 7);
        assert_eq!(flow_gradient(&flow).max_abs(), 0.0);
        assert_eq!(flow_gradient(&FlowField::<f64>::zeros(4, 4)).max_abs(), 0.0);
    }

    #[test]
    fn unit_ramp() {
        let flow = FlowField::from_fn(6, 6, |x, _| (x as f64, 0.0));
        let g = flow_gradient(&flow);
        for y in 0..6 {
            for x in 1..5 {
                assert_eq!(g.get(&[0, y, x]), 1.0);
                assert_eq!(g.get(&[1, y, x]), 0.0);
            }
        }
    }

    #[test]
    fn forward_is_identity_and_constant_flow_injects_nothing() {
        let mut h = HuberPenalty::<f64>::new(DEFAULT_DELTA, DEFAULT_WEIGHT);
        let flow = FlowField::constant(0.3, 0.7, 4, 5).into_tensor();
        assert_eq!(h.forward(&flow).unwrap(), flow);
        let g = Tensor::from_fn(&[2, 4, 5], |i| (i[1] * 5 + i[2]) as f64);
        assert_eq!(h.backward(&g).unwrap(), g);
    }

    #[test]
    fn adjoint_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FlowField::new(init::uniform(&[2, 5, 6], -1.0, 1.0, &mut rng)).unwrap();
        let g: Tensor<f64> = init::uniform(&[4, 5, 6], -1.0, 1.0, &mut rng);
        // <∇f, g> == <f, ∇ᵀg>
        let lhs: f64 = flow_gradient(&f).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let adj = flow_gradient_adjoint(&g).unwrap();
        let rhs: f64 = f.as_tensor().data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    struct PenaltyCheck {
        flow: Tensor<f64>,
        layer: HuberPenalty<f64>,
    }

    impl Checkable for PenaltyCheck {
        fn tensor_names(&self) -> Vec<String> {
            vec!["flow".into()]
        }
        fn tensor_mut(&mut self, _: usize) -> &mut Tensor<f64> {
            &mut self.flow
        }
        fn loss(&mut self) -> Result<f64> {
            let f = FlowField::new(self.flow.clone())?;
            Ok(self.layer.weight() * self.layer.penalty(&f))
        }
        fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
            self.layer.forward(&self.flow)?;
            Ok(vec![self.layer.backward(&Tensor::zeros(self.flow.shape()))?])
        }
    }

    #[test]
    fn injected_gradient_matches_penalty() {
        // δ large enough that the FD step stays inside one branch everywhere.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut check = PenaltyCheck {
            flow: init::uniform(&[2, 6, 6], -1.0, 1.0, &mut rng),
            layer: HuberPenalty::new(0.3, 0.5),
        };
        let report = gradcheck(&mut check, &GradCheckConfig::default());
        assert!(report.max_rel_error <= 1e-6, "{report}");
    }

    proptest! {
        #[test]
        fn penalty_properties(vals in proptest::collection::vec(-2.0f64..2.0, 2 * 4 * 5), cx in -3.0f64..3.0, cy in -3.0f64..3.0) {
            let h = HuberPenalty::<f64>::new(DEFAULT_DELTA, DEFAULT_WEIGHT);
            let flow = FlowField::new(Tensor::from_vec(&[2, 4, 5], vals).unwrap()).unwrap();
            let p = h.penalty(&flow);
            prop_assert!(p >= 0.0);
            let shifted = FlowField::new(flow.as_tensor().zip_map(
                &FlowField::constant(cx, cy, 4, 5).into_tensor(), |a, b| a + b)).unwrap();
            prop_assert!((h.penalty(&shifted) - p).abs() <= 1e-9 * p.max(1.0));
            let constant = flow.tx().iter().all(|&v| v == flow.tx()[0]) && flow.ty().iter().all(|&v| v == flow.ty()[0]);
            prop_assert_eq!(p == 0.0, constant);
        }

        #[test]
        fn zero_penalty_only_for_constant(x in 0usize..5, y in 0usize..4, bump in 1e-3f64..1.0) {
            let h = HuberPenalty::<f64>::new(DEFAULT_DELTA, DEFAULT_WEIGHT);
            let mut t = FlowField::constant(0.5, 0.5, 4, 5).into_tensor();
            t.set(&[0, y, x], 0.5 + bump);
            prop_assert!(h.penalty(&FlowField::new(t).unwrap()) > 0.0);
        }
    }
}
