//! Adam optimizer over any [`Parametrized`](super::Parametrized) model.

use super::Parametrized;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    /// Standard defaults (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`).
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently stored in the model.
    /// Moment buffers are allocated lazily on the first call; the model
    /// structure must not change between calls.
    pub fn step(&mut self, model: &mut dyn Parametrized) {
        let n = super::n_params(model);
        if self.m.is_empty() {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        assert_eq!(self.m.len(), n, "model size changed under the optimizer");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0usize;
        model.visit_params(&mut |_, vals, grads| {
            for i in 0..vals.len() {
                let g = grads[i];
                let mi = &mut m[off + i];
                let vi = &mut v[off + i];
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                vals[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            off += vals.len();
        });
    }
}
