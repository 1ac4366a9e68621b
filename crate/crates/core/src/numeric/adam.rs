use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Moment estimates for bias-corrected ADAM, one slot per parameter in store
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update using the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: state has {} slots, store has {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::Contract(format!("adam: missing gradient for `{name}`")));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for ((_, p), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let grad = p.grad.as_ref().expect("checked above");
            let it = p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &g), (mi, vi)) in it {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Graph;

    fn single(value: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new(0);
        store.insert("theta", Tensor::scalar(value)).unwrap();
        store
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = single(0.75);
        store.zero_grads();
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 0.1).unwrap();
        assert_eq!(store.get("theta").unwrap().item(), 0.75);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
        let mut store = single(0.0);
        store.zero_grads();
        store.accumulate_grad("theta", &[1.0]).unwrap();
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 1e-3).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((store.get("theta").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut store = single(1.0);
        let mut adam = AdamState::new(&store);
        assert!(matches!(adam.step(&mut store, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = single(1.0);
        let mut adam = AdamState::new(&store);
        for _ in 0..200 {
            let g = Graph::new();
            let theta = g.param(&store, "theta").unwrap();
            let loss = theta.mul(theta).unwrap().sum();
            g.backward(loss, &mut store).unwrap();
            adam.step(&mut store, 0.1).unwrap();
        }
        assert!(store.get("theta").unwrap().item().abs() < 0.05);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut store = single(0.3);
            let mut adam = AdamState::new(&store);
            for i in 0..10 {
                store.zero_grads();
                store.accumulate_grad("theta", &[0.1 * i as f64 - 0.4]).unwrap();
                adam.step(&mut store, 0.05).unwrap();
            }
            store.get("theta").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
