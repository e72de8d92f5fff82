//! AdamW optimizer with decoupled weight decay.

use super::Param;

pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0 }
    }

    /// One update over the given parameters. Decay only touches params
    /// flagged `decay` and is decoupled from the moment estimates.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            let n = p.value.len();
            let value = p.value.as_slice_mut().unwrap();
            let grad = p.grad.as_slice().unwrap();
            let m = p.m.as_slice_mut().unwrap();
            let v = p.v.as_slice_mut().unwrap();
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + decay * value[i]);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
