use super::{Param, Scalar};

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub moments: Vec<AdamMoments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, params: &[&Param<T>]) -> Self {
        Self {
            lr: T::from_f64(lr),
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            eps: T::from_f64(1e-8),
            step: 0,
            moments: params.iter().map(|p| AdamMoments::zeros(p.value.len())).collect(),
        }
    }

    /// Apply one update from the accumulated gradients. Parameters must be
    /// passed in the same order every call.
    pub fn update(&mut self, params: Vec<&mut Param<T>>) {
        assert_eq!(
            params.len(),
            self.moments.len(),
            "optimizer/parameter count mismatch"
        );
        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for (p, mom) in params.into_iter().zip(&mut self.moments) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                let m = self.beta1 * mom.m[i] + (one - self.beta1) * g;
                let v = self.beta2 * mom.v[i] + (one - self.beta2) * g * g;
                mom.m[i] = m;
                mom.v[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value[i] = p.value[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
