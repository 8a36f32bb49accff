use super::{FeatureMap, Param, Scalar};

/// Per-channel batch normalization over `N x H x W`.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates; inference uses the running estimates only, so a sample's
/// output does not depend on the rest of its batch.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: T,
    pub eps: T,
    cache: Option<NormCache<T>>,
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), &[channels], T::one()),
            beta: Param::filled(format!("{name}.beta"), &[channels], T::zero()),
            running_mean: Param::buffer(format!("{name}.running_mean"), &[channels], T::zero()),
            running_var: Param::buffer(format!("{name}.running_var"), &[channels], T::one()),
            momentum: T::from_f64(0.1),
            eps: T::from_f64(1e-5),
            cache: None,
        }
    }

    pub fn forward_train(&mut self, x: &mut FeatureMap<T>) {
        assert_eq!(x.channels, self.channels, "batch norm channels");
        let m = x.plane();
        let mf = T::from_f64(m as f64);
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = vec![T::zero(); self.channels];
        for c in 0..self.channels {
            let xs = x.channel_mut(c);
            let mean = xs.iter().copied().sum::<T>() / mf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let istd = T::one() / (var + self.eps).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let xh = &mut xhat[c * m..(c + 1) * m];
            for (v, h) in xs.iter_mut().zip(xh.iter_mut()) {
                *h = (*v - mean) * istd;
                *v = g * *h + b;
            }
            let unbiased = if m > 1 {
                var * mf / T::from_f64((m - 1) as f64)
            } else {
                var
            };
            let mom = self.momentum;
            self.running_mean.value[c] = (T::one() - mom) * self.running_mean.value[c] + mom * mean;
            self.running_var.value[c] = (T::one() - mom) * self.running_var.value[c] + mom * unbiased;
        }
        self.cache = Some(NormCache { xhat, inv_std });
    }

    pub fn infer(&self, x: &mut FeatureMap<T>) {
        assert_eq!(x.channels, self.channels, "batch norm channels");
        for c in 0..self.channels {
            let istd = T::one() / (self.running_var.value[c] + self.eps).sqrt();
            let scale = self.gamma.value[c] * istd;
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            x.channel_mut(c).iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }

    /// Converts `dy` into the gradient with respect to the normalized input, in place.
    pub fn backward(&mut self, dy: &mut FeatureMap<T>, param_grads: bool) {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let m = dy.plane();
        let mf = T::from_f64(m as f64);
        for c in 0..self.channels {
            let xh = &cache.xhat[c * m..(c + 1) * m];
            let d = dy.channel_mut(c);
            let sum_dy: T = d.iter().copied().sum();
            let sum_dy_xh: T = d.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            if param_grads {
                self.gamma.grad[c] = self.gamma.grad[c] + sum_dy_xh;
                self.beta.grad[c] = self.beta.grad[c] + sum_dy;
            }
            let k = self.gamma.value[c] * cache.inv_std[c] / mf;
            for (v, &h) in d.iter_mut().zip(xh) {
                *v = k * (mf * *v - sum_dy - h * sum_dy_xh);
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    /// Parameters followed by buffers.
    pub fn tensors_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }

    pub fn buffers(&self) -> Vec<&Param<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_channels_have_zero_mean_unit_variance() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        let mut x = FeatureMap::zeros(2, 3, 2, 2);
        x.data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i * i) as f64 * 0.1);
        bn.forward_train(&mut x);
        for c in 0..2 {
            let ch = x.channel(c);
            let mean: f64 = ch.iter().sum::<f64>() / 12.0;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        bn.gamma.value = vec![1.3, 0.7];
        bn.beta.value = vec![0.1, -0.2];
        let mut x = FeatureMap::zeros(2, 2, 2, 2);
        x.data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = ((i as f64) * 0.9).sin());
        let probe: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.4).cos()).collect();
        let loss = |bn: &mut BatchNorm<f64>, x: &FeatureMap<f64>| -> f64 {
            let mut y = x.clone();
            bn.forward_train(&mut y);
            y.data.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        loss(&mut bn, &x);
        let mut dy = FeatureMap {
            data: probe.clone(),
            ..x.clone()
        };
        bn.backward(&mut dy, true);
        let eps = 1e-6;
        for i in 0..16 {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&mut bn, &xp) - loss(&mut bn, &xm)) / (2.0 * eps);
            assert!((fd - dy.data[i]).abs() < 1e-6, "{i}: {fd} vs {}", dy.data[i]);
        }
    }
}
