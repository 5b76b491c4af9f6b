use super::Tensor;
use crate::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates of parameter `i`.
    pub fn moments(&self, i: usize) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(i)?.as_slice(), self.v.get(i)?.as_slice()))
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam", format!("{} params, {} grads", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape("adam", format!("state for {} params, got {}", self.m.len(), params.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.numel() {
                return Err(Error::shape("adam", format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (pk, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *pk -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(1e-3);
        let mut params = vec![Tensor::from_vec(vec![1.0, -2.0])];
        let grads = vec![Tensor::from_vec(vec![3.0, -1.0])];
        adam.step(&mut params, &grads).unwrap();
        let after_first = params.clone();
        let (m1, v1) = adam.moments(0).map(|(m, v)| (m.to_vec(), v.to_vec())).unwrap();
        adam.step(&mut params, &[Tensor::zeros(vec![2])]).unwrap();
        // moments decay; params still move on the remaining first moment
        let (m2, v2) = adam.moments(0).unwrap();
        for k in 0..2 {
            assert!((m2[k] - 0.9 * m1[k]).abs() < 1e-15);
            assert!((v2[k] - 0.999 * v1[k]).abs() < 1e-15);
        }
        assert_ne!(params, after_first);

        let mut fresh = Adam::new(1e-3);
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0])];
        fresh.step(&mut p, &[Tensor::zeros(vec![2])]).unwrap();
        assert_eq!(p[0].data(), [1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let lr = 1e-3;
        let mut adam = Adam::new(lr);
        let g = [0.5, -3.0, 1e-9];
        let mut params = vec![Tensor::zeros(vec![3])];
        adam.step(&mut params, &[Tensor::from_vec(g.to_vec())]).unwrap();
        for (p, gk) in params[0].data().iter().zip(g) {
            // m_hat = g, v_hat = g², so the update is -lr·g/(|g| + eps)
            let expected = -lr * gk / (gk.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        }
        assert!((params[0].data()[0] + lr).abs() < 1e-10);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut adam = Adam::new(1e-3);
            let mut p = vec![Tensor::from_vec(vec![0.1, 0.2, 0.3])];
            for _ in 0..2 {
                adam.step(&mut p, &[Tensor::from_vec(vec![0.3, -0.1, 0.7])]).unwrap();
            }
            p[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = Adam::new(1e-3);
        let mut p = vec![Tensor::zeros(vec![2])];
        assert!(adam.step(&mut p, &[Tensor::zeros(vec![3])]).is_err());
    }
}
