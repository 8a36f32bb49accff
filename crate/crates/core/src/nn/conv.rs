use rand::Rng;

use super::{matmul, FeatureMap, Param, Scalar};

/// Square kernel geometry shared by the strided convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// 4x4 kernel, stride 2, padding 1: halves (or doubles) the spatial size.
    pub const HALVING: ConvGeometry = ConvGeometry {
        kernel: 4,
        stride: 2,
        padding: 1,
    };

    pub fn conv_out(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn transposed_out(&self, size: usize) -> usize {
        (size - 1) * self.stride + self.kernel - 2 * self.padding
    }
}

/// Unfold `x` (`C x N x H x W`) into patch columns.
///
/// `col` has `C*k*k` rows and `N*Ho*Wo` columns; out-of-bounds taps read 0.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    batch: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let k = g.kernel;
    let ncols = batch * ho * wo;
    debug_assert_eq!(col.len(), channels * k * k * ncols);
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst_row = &mut col[row * ncols..(row + 1) * ncols];
                for n in 0..batch {
                    let src = &x[(c * batch + n) * h * w..(c * batch + n + 1) * h * w];
                    for oy in 0..ho {
                        let dst = &mut dst_row[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto `x`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    batch: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let k = g.kernel;
    let ncols = batch * ho * wo;
    debug_assert_eq!(col.len(), channels * k * k * ncols);
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &col[row * ncols..(row + 1) * ncols];
                for n in 0..batch {
                    let dst = &mut x[(c * batch + n) * h * w..(c * batch + n + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let src = &src_row[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst_row[ix as usize] = dst_row[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut FeatureMap<T>, bias: &Param<T>) {
    for c in 0..out.channels {
        let b = bias.value[c];
        out.channel_mut(c).iter_mut().for_each(|v| *v = *v + b);
    }
}

fn accumulate_bias_grad<T: Scalar>(dy: &FeatureMap<T>, bias: &mut Param<T>) {
    for c in 0..dy.channels {
        let s: T = dy.channel(c).iter().copied().sum();
        bias.grad[c] = bias.grad[c] + s;
    }
}

/// Strided 2-D convolution. Weight layout: `[out, in * k * k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    col: Vec<T>,
    batch: usize,
    h: usize,
    w: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        with_bias: bool,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            geometry,
            weight: Param::gaussian(
                format!("{name}.weight"),
                &[out_channels, in_channels, geometry.kernel, geometry.kernel],
                init_std,
                rng,
            ),
            bias: with_bias.then(|| Param::filled(format!("{name}.bias"), &[out_channels], T::zero())),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &FeatureMap<T>) -> FeatureMap<T> {
        let (out, col) = self.forward_inner(x);
        self.cache = Some(ConvCache {
            col,
            batch: x.batch,
            h: x.height,
            w: x.width,
        });
        out
    }

    /// Forward pass without retaining the patch matrix.
    pub fn infer(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        self.forward_inner(x).0
    }

    fn forward_inner(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, Vec<T>) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let g = self.geometry;
        let (ho, wo) = (g.conv_out(x.height), g.conv_out(x.width));
        let rows = self.in_channels * g.kernel * g.kernel;
        let ncols = x.batch * ho * wo;
        let mut col = vec![T::zero(); rows * ncols];
        im2col(
            &x.data, x.channels, x.batch, x.height, x.width, g, ho, wo, &mut col,
        );
        let mut out = FeatureMap::zeros(self.out_channels, x.batch, ho, wo);
        matmul(
            &self.weight.value,
            false,
            &col,
            false,
            &mut out.data,
            self.out_channels,
            rows,
            ncols,
            T::zero(),
        );
        if let Some(b) = &self.bias {
            add_bias(&mut out, b);
        }
        (out, col)
    }

    /// Backpropagate `dy`. Parameter gradients accumulate only when
    /// `param_grads` is set; the input gradient is returned when requested.
    pub fn backward(
        &mut self,
        dy: &FeatureMap<T>,
        param_grads: bool,
        input_grad: bool,
    ) -> Option<FeatureMap<T>> {
        let cache = self.cache.as_ref().expect("conv backward before forward");
        let g = self.geometry;
        let rows = self.in_channels * g.kernel * g.kernel;
        let ncols = dy.plane();
        if param_grads {
            matmul(
                &dy.data,
                false,
                &cache.col,
                true,
                &mut self.weight.grad,
                self.out_channels,
                ncols,
                rows,
                T::one(),
            );
            if let Some(b) = &mut self.bias {
                accumulate_bias_grad(dy, b);
            }
        }
        if !input_grad {
            return None;
        }
        let mut dcol = vec![T::zero(); rows * ncols];
        matmul(
            &self.weight.value,
            true,
            &dy.data,
            false,
            &mut dcol,
            rows,
            self.out_channels,
            ncols,
            T::zero(),
        );
        let mut dx = FeatureMap::zeros(self.in_channels, cache.batch, cache.h, cache.w);
        col2im(
            &dcol,
            self.in_channels,
            cache.batch,
            cache.h,
            cache.w,
            g,
            dy.height,
            dy.width,
            &mut dx.data,
        );
        Some(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Strided transposed convolution (the adjoint of [`Conv2d`]).
/// Weight layout: `[in, out * k * k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<FeatureMap<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        with_bias: bool,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            geometry,
            weight: Param::gaussian(
                format!("{name}.weight"),
                &[in_channels, out_channels, geometry.kernel, geometry.kernel],
                init_std,
                rng,
            ),
            bias: with_bias.then(|| Param::filled(format!("{name}.bias"), &[out_channels], T::zero())),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &FeatureMap<T>) -> FeatureMap<T> {
        let out = self.forward_inner(x);
        self.cache = Some(x.clone());
        out
    }

    /// Forward pass without retaining the input for backpropagation.
    pub fn infer(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        self.forward_inner(x)
    }

    fn forward_inner(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        assert_eq!(x.channels, self.in_channels, "transposed conv input channels");
        let g = self.geometry;
        let (ho, wo) = (g.transposed_out(x.height), g.transposed_out(x.width));
        let rows = self.out_channels * g.kernel * g.kernel;
        let ncols = x.plane();
        let mut col = vec![T::zero(); rows * ncols];
        matmul(
            &self.weight.value,
            true,
            &x.data,
            false,
            &mut col,
            rows,
            self.in_channels,
            ncols,
            T::zero(),
        );
        let mut out = FeatureMap::zeros(self.out_channels, x.batch, ho, wo);
        col2im(
            &col,
            self.out_channels,
            x.batch,
            ho,
            wo,
            g,
            x.height,
            x.width,
            &mut out.data,
        );
        if let Some(b) = &self.bias {
            add_bias(&mut out, b);
        }
        out
    }

    pub fn backward(
        &mut self,
        dy: &FeatureMap<T>,
        param_grads: bool,
        input_grad: bool,
    ) -> Option<FeatureMap<T>> {
        let x = self
            .cache
            .as_ref()
            .expect("transposed conv backward before forward");
        let g = self.geometry;
        let rows = self.out_channels * g.kernel * g.kernel;
        let ncols = x.plane();
        let mut dcol = vec![T::zero(); rows * ncols];
        im2col(
            &dy.data,
            self.out_channels,
            dy.batch,
            dy.height,
            dy.width,
            g,
            x.height,
            x.width,
            &mut dcol,
        );
        if param_grads {
            matmul(
                &x.data,
                false,
                &dcol,
                true,
                &mut self.weight.grad,
                self.in_channels,
                ncols,
                rows,
                T::one(),
            );
            if let Some(b) = &mut self.bias {
                accumulate_bias_grad(dy, b);
            }
        }
        if !input_grad {
            return None;
        }
        let mut dx = FeatureMap::zeros(self.in_channels, x.batch, x.height, x.width);
        matmul(
            &self.weight.value,
            false,
            &dcol,
            false,
            &mut dx.data,
            self.in_channels,
            rows,
            ncols,
            T::zero(),
        );
        Some(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
