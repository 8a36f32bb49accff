//! Minimal convolutional network engine with hand-written backward passes.
//!
//! Activations are stored channel-major (`C x N x H x W`) so that every
//! convolution lowers to a single matrix product over the whole batch.

mod conv;
mod dense;
mod norm;
mod optim;
mod scalar;

pub use conv::{col2im, im2col, Conv2d, ConvGeometry, ConvTranspose2d};
pub use dense::Dense;
pub use norm::BatchNorm;
pub use optim::{Adam, AdamMoments};
pub use scalar::{matmul, Scalar};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Channel-major batch of feature planes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    /// Elements per channel (`N * H * W`).
    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.batch == other.batch
            && self.height == other.height
            && self.width == other.width
    }
}

/// Named trainable tensor with its gradient accumulator.
///
/// Non-trainable state (running statistics) uses the same type with an
/// empty gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn filled(name: impl Into<String>, shape: &[usize], fill: T) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![fill; len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn gaussian<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::filled(name, shape, T::zero());
        for v in &mut p.value {
            let z: f64 = StandardNormal.sample(rng);
            *v = T::from_f64(z * std);
        }
        p
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], fill: T) -> Self {
        let mut p = Self::filled(name, shape, fill);
        p.grad = Vec::new();
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: self.grad.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// In-place leaky ReLU. The output keeps the input's sign, so the output
/// alone is enough for the backward pass.
pub fn leaky_relu_inplace<T: Scalar>(x: &mut [T], slope: T) {
    for v in x {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

pub fn leaky_relu_backward<T: Scalar>(out: &[T], grad: &mut [T], slope: T) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = *g * slope;
        }
    }
}

pub fn tanh_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        *g = *g * (T::one() - o * o);
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
