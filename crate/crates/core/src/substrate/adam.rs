use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update from the stored gradients, which are
    /// cleared afterwards. Fails without touching anything if any parameter
    /// has no gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            store.grad(id)?;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in store.ids() {
            let param = store.get_mut(id);
            let grad = param.grad.take().expect("checked above");
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (((w, g), m), v) in param.value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::{Gradients, Tensor};

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut store = ParamStore::new();
        let w = store.add("t", "w", Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap());
        let mut adam = AdamState::new(&store, 0.1);
        store.accumulate(&Gradients::zeros_like(&store));
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(w).data(), &[1.5, -2.0]);
        assert_eq!(adam.step_count(), 1);
        assert!(store.get(w).grad.is_none(), "grads cleared after the step");
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let w = store.add("t", "w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store, 0.1);
        let mut g = Gradients::zeros_like(&store);
        g.grads[0].data_mut()[0] = 1.0;
        store.accumulate(&g);
        adam.step(&mut store).unwrap();
        assert!((store.value(w).item() + 0.1).abs() < 1e-6);
    }

    #[test]
    fn missing_grads_rejected() {
        let mut store = ParamStore::new();
        store.add("t", "w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store, 0.1);
        assert!(matches!(adam.step(&mut store), Err(Error::MissingGrad(_))));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn quadratic_magnitude_decreases() {
        let mut store = ParamStore::new();
        let w = store.add("t", "w", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&store, 0.05);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let mut g = Gradients::zeros_like(&store);
            g.grads[0].data_mut()[0] = 2.0 * store.value(w).item();
            store.accumulate(&g);
            adam.step(&mut store).unwrap();
            let cur = store.value(w).item().abs();
            assert!(cur < prev, "{cur} !< {prev}");
            prev = cur;
        }
    }
}
