//! Adam with bias correction.

use crate::params::ParamStore;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    /// First moments, one per parameter in store order.
    pub m: Vec<Vec<T>>,
    /// Second moments.
    pub v: Vec<Vec<T>>,
    pub skipped_steps: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, learning_rate: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.tensor.len()]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: zeros(),
            v: zeros(),
            skipped_steps: 0,
        }
    }

    /// Applies one update from the gradients held in `store`.
    ///
    /// Returns `false` and leaves everything untouched when any gradient is non-finite.
    /// Frozen parameters are not updated.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> bool {
        let finite = store
            .iter()
            .all(|(_, p)| p.tensor.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite())));
        if !finite {
            self.skipped_steps += 1;
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step_count + 1);
            return false;
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let one = T::one();
        let bc1 = T::c(1.0 - self.beta1.powi(t));
        let bc2 = T::c(1.0 - self.beta2.powi(t));
        let lr = T::c(self.learning_rate);
        let eps = T::c(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let p = store.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            let Some(g) = p.grad.take() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.grad = Some(g);
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_f64(&[1], &[w]).unwrap());
        s.get_mut(id).grad = Some(vec![g]);
        s
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut s = single(1.5, 0.0);
        let mut opt = Adam::new(&s, 0.1);
        assert!(opt.step(&mut s));
        assert_eq!(s.get(s.find("w").unwrap()).data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = single(0.0, -4.0);
        let mut opt = Adam::new(&s, 0.01);
        opt.step(&mut s);
        let w = s.get(s.find("w").unwrap()).data()[0];
        assert!((w - 0.01).abs() < 1e-8, "{w}");
    }

    #[test]
    fn quadratic_converges() {
        let mut s = single(0.0, 0.0);
        let id = s.find("w").unwrap();
        let mut opt = Adam::new(&s, 0.1);
        for _ in 0..200 {
            let w = s.get(id).data()[0];
            s.get_mut(id).grad = Some(vec![2.0 * (w - 3.0)]);
            opt.step(&mut s);
        }
        assert!((s.get(id).data()[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut s = single(1.0, f64::NAN);
        let mut opt = Adam::new(&s, 0.1);
        assert!(!opt.step(&mut s));
        assert_eq!(opt.step_count, 0);
        assert_eq!(opt.skipped_steps, 1);
        assert_eq!(s.get(s.find("w").unwrap()).data()[0], 1.0);
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut s = single(1.0, 1.0);
        let id = s.find("w").unwrap();
        s.set_frozen(id, true);
        let mut opt = Adam::new(&s, 0.1);
        opt.step(&mut s);
        assert_eq!(s.get(id).data()[0], 1.0);
    }
}
