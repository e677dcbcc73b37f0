use serde::{Deserialize, Serialize};

use super::param::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub step: u64,
}

impl Default for Adam {
    fn default() -> Adam {
        Adam { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: Some(10.0), step: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Norm before clipping.
    pub grad_norm: f64,
    pub clip_scale: f64,
}

impl Adam {
    pub fn with_lr(lr: f64) -> Adam {
        Adam { lr, ..Adam::default() }
    }

    /// One update from the accumulated gradients. Non-finite gradients leave
    /// parameters, moments and the step counter untouched.
    pub fn step(&mut self, params: &mut dyn Parameters) -> Result<StepReport> {
        let mut finite = true;
        params.visit(&mut |p| finite &= p.grad.is_finite());
        if !finite {
            return Err(Error::NonFiniteGradient);
        }
        let grad_norm = params.grad_norm();
        let clip_scale = match self.max_grad_norm {
            Some(max) if grad_norm > max => max / grad_norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        params.visit_mut(&mut |p| {
            for k in 0..p.value.data.len() {
                let g = p.grad.data[k] * clip_scale;
                p.m[k] = b1 * p.m[k] + (1.0 - b1) * g;
                p.v[k] = b2 * p.v[k] + (1.0 - b2) * g * g;
                let m_hat = p.m[k] / bc1;
                let v_hat = p.v[k] / bc2;
                p.value.data[k] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        });
        Ok(StepReport { grad_norm, clip_scale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::Matrix;
    use crate::nn::param::Param;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = Param::new("p", Matrix::from_vec(1, 3, alloc::vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.value.clone();
        Adam::default().step(&mut p).unwrap();
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::zeros("p", 1, 1);
        p.grad.data[0] = 1.0;
        let mut adam = Adam::default();
        adam.step(&mut p).unwrap();
        assert!((p.value.data[0] + 3e-4).abs() < 1e-11);
        // repeated unit gradient keeps the bias-corrected step at -lr
        adam.step(&mut p).unwrap();
        assert!((p.value.data[0] + 6e-4).abs() < 1e-11);
    }

    #[test]
    fn clips_to_global_norm() {
        let mut p = Param::zeros("p", 1, 2);
        p.grad.data = alloc::vec![12.0, 16.0];
        let mut adam = Adam::default();
        let r = adam.step(&mut p).unwrap();
        assert_eq!(r.grad_norm, 20.0);
        assert_eq!(r.clip_scale, 0.5);
        assert!((p.m[0] - 0.1 * 6.0).abs() < 1e-12 && (p.m[1] - 0.1 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = Param::zeros("p", 1, 2);
        p.grad.data = alloc::vec![f64::NAN, 1.0];
        let mut adam = Adam::default();
        assert_eq!(adam.step(&mut p), Err(Error::NonFiniteGradient));
        assert_eq!(adam.step, 0);
        assert_eq!(p.value.data, alloc::vec![0.0, 0.0]);
        assert_eq!(p.m, alloc::vec![0.0, 0.0]);
    }
}
