use super::backbone::ParamSet;

/// Adam with the usual defaults (β₁ 0.9, β₂ 0.999, ε 1e-8) and bias
/// correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(set: &ParamSet) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: set.zero_grads(), v: set.zero_grads(), t: 0 }
    }

    /// One update of the tensors listed in `trainable`, each with its own
    /// learning rate.
    pub fn step(&mut self, set: &mut ParamSet, grads: &[Vec<f64>], trainable: &[(usize, f64)]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for &(i, lr) in trainable {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, g), m), v) in set.params[i].data.iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}
