use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment of a parameter, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(name)
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &HashMap<String, Tensor<T>>) -> Result<()> {
        self.apply(params.named_mut(), grads)
    }

    /// Updates every trainable tensor in `params`; frozen ones are skipped.
    pub fn apply(
        &mut self,
        params: Vec<(String, &mut Tensor<T>, bool)>,
        grads: &HashMap<String, Tensor<T>>,
    ) -> Result<()> {
        for (name, tensor, trainable) in &params {
            if !trainable {
                continue;
            }
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            if g.shape() != tensor.shape() {
                return Err(Error::shape("adam", tensor.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::one() - T::of(self.beta1.powi(t));
        let bc2 = T::one() - T::of(self.beta2.powi(t));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));

        for (name, tensor, trainable) in params {
            if !trainable {
                continue;
            }
            let g = &grads[&name];
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (Tensor::zeros(tensor.shape()), Tensor::zeros(tensor.shape())));
            let iter = tensor
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &gi), (mi, vi)) in iter {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(adam: &mut Adam<f64>, x: &mut Tensor<f64>, g: f64) {
        let grads = HashMap::from([("x".to_string(), Tensor::from_f64(&[1], &[g]).unwrap())]);
        adam.apply(vec![("x".into(), x, true)], &grads).unwrap();
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut adam = Adam::new(1e-3);
        let mut x = Tensor::from_f64(&[3], &[1.0, 1.0, 1.0]).unwrap();
        let grads = HashMap::from([("x".to_string(), Tensor::from_f64(&[3], &[0.3, -20.0, 1e-3]).unwrap())]);
        adam.apply(vec![("x".into(), &mut x, true)], &grads).unwrap();
        // ε shifts the step for the 1e-3 gradient by about 1e-8.
        let expected: [f64; 3] = [1.0 - 1e-3, 1.0 + 1e-3, 1.0 - 1e-3];
        for (got, want) in x.data().iter().zip(expected) {
            assert!((got - want).abs() < 2e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::<f64>::new(1e-3);
        let mut x = Tensor::from_f64(&[2], &[0.5, -0.25]).unwrap();
        step_scalar_vec(&mut adam, &mut x, &[0.0, 0.0]);
        assert_eq!(x.data(), &[0.5, -0.25]);
    }

    fn step_scalar_vec(adam: &mut Adam<f64>, x: &mut Tensor<f64>, g: &[f64]) {
        let grads = HashMap::from([("x".to_string(), Tensor::from_f64(x.shape(), g).unwrap())]);
        adam.apply(vec![("x".into(), x, true)], &grads).unwrap();
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // lr = 0.1, x0 = 1, g1 = 0.5, g2 = -0.2
        // m1 = 0.05, v1 = 0.00025; m̂1 = 0.5, v̂1 = 0.25 → x1 = 1 − 0.1·0.5/(0.5 + 1e-8)
        // m2 = 0.045 − 0.02 = 0.025, v2 = 0.00024975 + 0.00004 = 0.00028975
        // m̂2 = 0.025/0.19, v̂2 = 0.00028975/0.001999 → x2 = x1 − 0.1·m̂2/(√v̂2 + 1e-8)
        let x1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        let m_hat2: f64 = 0.025 / (1.0 - 0.81);
        let v_hat2: f64 = 0.00028975 / (1.0 - 0.999f64.powi(2));
        let x2 = x1 - 0.1 * m_hat2 / (v_hat2.sqrt() + 1e-8);

        let mut adam = Adam::new(0.1);
        let mut x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        step_scalar(&mut adam, &mut x, 0.5);
        assert!((x.data()[0] - x1).abs() < 1e-12);
        step_scalar(&mut adam, &mut x, -0.2);
        assert!((x.data()[0] - x2).abs() < 1e-12, "{} vs {x2}", x.data()[0]);
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn frozen_and_missing() {
        let mut adam = Adam::<f64>::new(0.1);
        let mut frozen = Tensor::from_f64(&[1], &[1.0]).unwrap();
        adam.apply(vec![("f".into(), &mut frozen, false)], &HashMap::new())
            .unwrap();
        assert_eq!(frozen.data(), &[1.0]);

        let mut x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let err = adam
            .apply(vec![("x".into(), &mut x, true)], &HashMap::new())
            .unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "x"));
    }
}
