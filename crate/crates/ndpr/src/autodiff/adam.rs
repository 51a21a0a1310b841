//! Adam with bias correction.

/// Optimizer hyperparameters. Defaults: lr 3e-4, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Clone, Copy, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optional global-norm gradient clipping, applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Adam::default() }
    }

    /// One update over every parameter's accumulated gradient, then zero
    /// the accumulators.
    pub fn step(&self, params: &mut super::params::ParamSet) {
        let scale = match self.clip_norm {
            Some(max) => {
                let sq: f64 = params
                    .iter()
                    .map(|(_, p)| p.grad.data().iter().map(|g| g * g).sum::<f64>())
                    .sum();
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for p in params.iter_mut() {
            p.steps += 1;
            let t = p.steps as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let m = p.moment1.data_mut();
            let v = p.moment2.data_mut();
            let x = p.value.data_mut();
            for ((g, m), (v, x)) in
                p.grad.data().iter().zip(m.iter_mut()).zip(v.iter_mut().zip(x.iter_mut()))
            {
                let g = g * scale;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::ParamSet;
    use crate::autodiff::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(vec![1.5, -2.0]));
        Adam::default().step(&mut ps);
        assert_eq!(ps.value(p).data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr_against_gradient_sign() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(vec![0.0, 0.0]));
        ps.get_mut(p).grad = Tensor::vector(vec![3.0, -0.7]);
        let adam = Adam::with_lr(0.01);
        adam.step(&mut ps);
        let x = ps.value(p).data();
        // Bias-corrected first step is lr * g / (|g| + eps') ~= lr * sign(g).
        assert!((x[0] + 0.01).abs() < 1e-6, "got {}", x[0]);
        assert!((x[1] - 0.01).abs() < 1e-6, "got {}", x[1]);
    }

    #[test]
    fn descends_quadratic_from_one() {
        // f(x) = x^2, analytic gradient 2x, 10 steps from x = 1 at lr = 0.1.
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::scalar(1.0));
        let adam = Adam::with_lr(0.1);
        let mut prev = 1.0_f64;
        for _ in 0..10 {
            let x = ps.value(p).item();
            ps.get_mut(p).grad = Tensor::scalar(2.0 * x);
            adam.step(&mut ps);
            let now = ps.value(p).item().abs();
            assert!(now < prev.abs(), "|x| did not decrease: {now} vs {prev}");
            prev = now;
        }
    }

    #[test]
    fn grads_zeroed_after_step() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(vec![1.0]));
        ps.get_mut(p).grad = Tensor::vector(vec![5.0]);
        Adam::default().step(&mut ps);
        assert_eq!(ps.get(p).grad.data(), &[0.0]);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut ps = ParamSet::new();
        let p = ps.add("x", Tensor::vector(vec![0.0]));
        ps.get_mut(p).grad = Tensor::vector(vec![100.0]);
        let adam = Adam { clip_norm: Some(1.0), lr: 0.01, ..Adam::default() };
        adam.step(&mut ps);
        // Clipped gradient is 1.0; first Adam step still ~= lr.
        assert!((ps.value(p).item() + 0.01).abs() < 1e-6);
    }
}
