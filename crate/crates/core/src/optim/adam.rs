/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(2, 5e-3, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -2.0];
        adam.update(&mut p, &[1.0, -3.0]);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        assert!((p[0] - (1.0 - 5e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 5e-3 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut adam = Adam::new(1, 0.0, 0.9, 0.999, 1e-8);
        let mut p = [0.25];
        for _ in 0..10 {
            adam.update(&mut p, &[4.0]);
        }
        assert_eq!(p, [0.25]);
    }
}
