use crate::error::{NnError, Result};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 3e-5,
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// Applies one update from the gradients held in `store`. Nothing is
    /// modified if any trainable gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if p.kind == ParamKind::Trainable && !p.grad.all_finite() {
                return Err(NnError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let c = &self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let eps = T::from_f64_lossy(c.eps);
        let lr = T::from_f64_lossy(c.lr);
        let decay = T::from_f64_lossy(c.lr * c.weight_decay);
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(self.step as i32));
        for (i, p) in store.iter_mut().enumerate() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let w = p.value.data_mut();
            for (j, &g) in p.grad.data().iter().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] = w[j] - decay * w[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(w: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(&[w.len()], w.to_vec()).unwrap(), ParamKind::Trainable);
        s
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut s = store_with(&[1.0, -2.0]);
        let mut adam = Adam::new(&s, AdamConfig { weight_decay: 0.0, ..Default::default() });
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(s.id("w").unwrap()).data(), &[1.0, -2.0]);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut s = store_with(&[1.0]);
        let id = s.id("w").unwrap();
        let mut adam = Adam::new(&s, AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() });
        s.get_mut(id).grad.data_mut()[0] = 2.0;
        adam.step(&mut s).unwrap();
        assert!(s.value(id).data()[0] < 1.0);
    }

    #[test]
    fn converges_on_two_dimensional_quadratic() {
        // f(w) = 3 w0^2 + 0.5 w1^2
        let mut s = store_with(&[1.5, -2.0]);
        let id = s.id("w").unwrap();
        let mut adam = Adam::new(&s, AdamConfig { lr: 0.01, weight_decay: 0.0, ..Default::default() });
        let mut done = None;
        for it in 0..2000 {
            let w = s.value(id).data().to_vec();
            if (w[0] * w[0] + w[1] * w[1]).sqrt() < 1e-3 {
                done = Some(it);
                break;
            }
            s.get_mut(id).grad = Tensor::new(&[2], vec![6.0 * w[0], w[1]]).unwrap();
            adam.step(&mut s).unwrap();
        }
        assert!(done.is_some(), "not converged: {:?}", s.value(id).data());
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut s = store_with(&[1.0]);
        let id = s.id("w").unwrap();
        let mut adam = Adam::new(&s, AdamConfig::default());
        s.get_mut(id).grad.data_mut()[0] = f64::NAN;
        assert!(matches!(adam.step(&mut s), Err(NnError::NonFiniteGradient(_))));
        assert_eq!(s.value(id).data(), &[1.0]);
        assert_eq!(adam.steps(), 0);
    }
}
