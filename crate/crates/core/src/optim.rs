//! First-order optimizer plumbing: Adam with bias correction, cosine learning
//! rate decay, and global-norm gradient clipping.

/// Adam state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// Reset moments, e.g. when the parameter vector is re-anchored.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// Grow the state to `dim`, preserving existing moments. New coordinates
    /// start with zero moments.
    pub fn resize(&mut self, dim: usize) {
        self.m.resize(dim, 0.0);
        self.v.resize(dim, 0.0);
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// One descent step: returns the update to *add* to the parameters.
    pub fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut delta = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            delta[i] = -lr * mhat / (vhat.sqrt() + self.eps);
        }
        delta
    }
}

/// Cosine decay from `base` toward zero over `total` iterations.
pub fn cosine_lr(base: f64, iter: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let t = iter.min(total - 1) as f64 / (total - 1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Scale `grad` in place so its L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
