use crate::math;
use crate::nn::ParamTensor;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
        }
    }

    /// Apply one update to every tensor from its `grad`, then zero the grads.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut ParamTensor>) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - math::powf(self.beta1, t);
        let bc2 = 1.0 - math::powf(self.beta2, t);
        for p in params {
            for i in 0..p.values.len() {
                let g = p.grad[i];
                p.adam_m[i] = self.beta1 * p.adam_m[i] + (1.0 - self.beta1) * g;
                p.adam_v[i] = self.beta2 * p.adam_v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.adam_m[i] / bc1;
                let v_hat = p.adam_v[i] / bc2;
                p.values[i] -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
                p.grad[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = ParamTensor::filled("w", &[3], 1.25);
        let mut opt = Adam::new(0.1);
        for _ in 0..5 {
            opt.step([&mut p]);
        }
        assert_eq!(p.values, [1.25; 3]);
    }

    #[test]
    fn abs_descends() {
        let mut p = ParamTensor::filled("w", &[1], 1.0);
        p.grad[0] = 1.0; // d|w|/dw at w = 1
        Adam::new(0.01).step([&mut p]);
        assert!(p.values[0] < 1.0);
        assert_eq!(p.grad[0], 0.0);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = ParamTensor::filled("w", &[1], 0.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            p.grad[0] = 2.0 * (p.values[0] - 3.0);
            opt.step([&mut p]);
        }
        assert!((p.values[0] - 3.0).abs() < 0.1, "w = {}", p.values[0]);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut p = ParamTensor::filled("w", &[2], 0.5);
        p.grad = alloc::vec![3.0, -7.0];
        Adam::new(0.0).step([&mut p]);
        assert_eq!(p.values, [0.5, 0.5]);
    }
}
