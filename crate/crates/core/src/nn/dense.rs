use rand::Rng;

use super::{matmul, Param, Scalar};

/// Fully connected layer over row-major `[batch, features]` inputs.
/// Weight layout: `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<(Vec<T>, usize)>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_features: usize,
        out_features: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::gaussian(
                format!("{name}.weight"),
                &[out_features, in_features],
                init_std,
                rng,
            ),
            bias: Param::filled(format!("{name}.bias"), &[out_features], T::zero()),
            cache: None,
        }
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), batch * self.in_features, "dense input size");
        let mut y = vec![T::zero(); batch * self.out_features];
        for row in y.chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        matmul(
            x,
            false,
            &self.weight.value,
            true,
            &mut y,
            batch,
            self.in_features,
            self.out_features,
            T::one(),
        );
        y
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Vec<T> {
        let y = self.infer(x, batch);
        self.cache = Some((x.to_vec(), batch));
        y
    }

    pub fn backward(&mut self, dy: &[T], param_grads: bool, input_grad: bool) -> Option<Vec<T>> {
        let (x, batch) = self.cache.as_ref().expect("dense backward before forward");
        let batch = *batch;
        if param_grads {
            matmul(
                dy,
                true,
                x,
                false,
                &mut self.weight.grad,
                self.out_features,
                batch,
                self.in_features,
                T::one(),
            );
            for row in dy.chunks(self.out_features) {
                for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                    *g = *g + d;
                }
            }
        }
        if !input_grad {
            return None;
        }
        let mut dx = vec![T::zero(); batch * self.in_features];
        matmul(
            dy,
            false,
            &self.weight.value,
            false,
            &mut dx,
            batch,
            self.out_features,
            self.in_features,
            T::zero(),
        );
        Some(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
