//! Class-conditional generator and discriminator.
//!
//! The generator concatenates a one-hot class indicator to the latent
//! vector, projects to a 4x4 grid and doubles the resolution with
//! `log2(S/4)` transposed-convolution blocks. The discriminator appends
//! `K` constant indicator planes to the image, halves the resolution with
//! `log2(S/8)` convolution blocks and scores the 8x8 features with a dense
//! sigmoid head.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu_backward, leaky_relu_inplace, sigmoid, tanh_backward, tanh_inplace, BatchNorm, Conv2d,
    ConvGeometry, ConvTranspose2d, Dense, FeatureMap, Param, Scalar,
};
use crate::seed::derive_seed;
use crate::segmentation::ColorImage;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    /// Batch normalization inside the blocks.
    pub normalization: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            num_classes: 10,
            latent_dim: 100,
            base_channels: 64,
            leaky_slope: 0.2,
            normalization: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size must be a power of two >= 16, got {}",
                self.image_size
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(Error::Config(
                "latent_dim and base_channels must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!(
                "leaky_slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// `log2(S / 4)`: 6 at S = 256.
    pub fn generator_up_blocks(&self) -> usize {
        (self.image_size / 4).trailing_zeros() as usize
    }

    /// `log2(S / 8)`: 5 at S = 256.
    pub fn discriminator_down_blocks(&self) -> usize {
        (self.image_size / 8).trailing_zeros() as usize
    }

    fn width_cap(&self) -> usize {
        8 * self.base_channels
    }

    /// Channels of the projected 4x4 grid followed by each up-block's output.
    pub fn generator_channels(&self) -> Vec<usize> {
        let n = self.generator_up_blocks();
        let mut ch = vec![(self.base_channels << (n - 1)).min(self.width_cap())];
        for i in 0..n {
            if i + 1 == n {
                ch.push(3);
            } else {
                ch.push((self.base_channels << (n - 2 - i)).min(self.width_cap()));
            }
        }
        ch
    }

    /// Output channels of each down-block.
    pub fn discriminator_channels(&self) -> Vec<usize> {
        (0..self.discriminator_down_blocks())
            .map(|i| (self.base_channels << i).min(self.width_cap()))
            .collect()
    }
}

/// Standard-normal latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f32>);

impl LatentVector {
    pub fn sample(dim: usize, seed: u64) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

/// Porosity class used as the conditioning signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionLabel(pub usize);

/// Planar `3 x S x S` network-side image with channels in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl NetworkImage {
    /// Map a `[0, 1]` color image into network range.
    pub fn from_color(img: &ColorImage) -> Result<Self> {
        if img.height() != img.width() {
            return Err(Error::Domain(format!(
                "network images are square, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        let s = img.height();
        let mut data = vec![0.0; 3 * s * s];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * s * s + i] = px[c] * 2.0 - 1.0;
            }
        }
        Ok(Self { size: s, data })
    }

    /// Map back to `[0, 1]` color.
    pub fn to_color(&self) -> ColorImage {
        let s = self.size;
        let mut data = vec![0.0; 3 * s * s];
        for i in 0..s * s {
            for c in 0..3 {
                data[i * 3 + c] = ((self.data[c * s * s + i] + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
        ColorImage::from_raw_unchecked(s, s, data)
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&c| c >= k) {
        Some(c) => Err(Error::Domain(format!(
            "class index {c} out of range for {k} classes"
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
struct UpBlock<T> {
    conv: ConvTranspose2d<T>,
    norm: Option<BatchNorm<T>>,
    out: Option<FeatureMap<T>>,
}

/// Conditional generator network.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    config: NetworkConfig,
    project: Dense<T>,
    project_norm: Option<BatchNorm<T>>,
    project_out: Option<FeatureMap<T>>,
    blocks: Vec<UpBlock<T>>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = config.generator_channels();
        let inputs = config.latent_dim + config.num_classes;
        let project = Dense::new("g.project", inputs, ch[0] * 16, INIT_STD, &mut rng);
        let project_norm = config
            .normalization
            .then(|| BatchNorm::new("g.project_norm", ch[0]));
        let n = config.generator_up_blocks();
        let blocks = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let norm = config.normalization && !last;
                UpBlock {
                    conv: ConvTranspose2d::new(
                        &format!("g.up{i}"),
                        ch[i],
                        ch[i + 1],
                        ConvGeometry::HALVING,
                        !norm,
                        INIT_STD,
                        &mut rng,
                    ),
                    norm: norm.then(|| BatchNorm::new(&format!("g.up{i}_norm"), ch[i + 1])),
                    out: None,
                }
            })
            .collect();
        Ok(Self {
            config: *config,
            project,
            project_norm,
            project_out: None,
            blocks,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn up_block_count(&self) -> usize {
        self.blocks.len()
    }

    fn input_rows(&self, z: &[T], labels: &[usize]) -> Result<Vec<T>> {
        let (l, k) = (self.config.latent_dim, self.config.num_classes);
        if z.len() != labels.len() * l {
            return Err(Error::Domain(format!(
                "latent batch has {} values, expected {} x {l}",
                z.len(),
                labels.len()
            )));
        }
        check_labels(labels, k)?;
        let mut rows = vec![T::zero(); labels.len() * (l + k)];
        for (n, &c) in labels.iter().enumerate() {
            let row = &mut rows[n * (l + k)..(n + 1) * (l + k)];
            row[..l].copy_from_slice(&z[n * l..(n + 1) * l]);
            row[l + c] = T::one();
        }
        Ok(rows)
    }

    fn rows_to_grid(&self, rows: &[T], batch: usize) -> FeatureMap<T> {
        let c0 = self.project.out_features / 16;
        let mut grid = FeatureMap::zeros(c0, batch, 4, 4);
        for n in 0..batch {
            for c in 0..c0 {
                let src = &rows[n * c0 * 16 + c * 16..n * c0 * 16 + (c + 1) * 16];
                grid.data[(c * batch + n) * 16..(c * batch + n + 1) * 16].copy_from_slice(src);
            }
        }
        grid
    }

    fn grid_to_rows(&self, grid: &FeatureMap<T>) -> Vec<T> {
        let (c0, batch) = (grid.channels, grid.batch);
        let mut rows = vec![T::zero(); grid.data.len()];
        for n in 0..batch {
            for c in 0..c0 {
                rows[n * c0 * 16 + c * 16..n * c0 * 16 + (c + 1) * 16]
                    .copy_from_slice(&grid.data[(c * batch + n) * 16..(c * batch + n + 1) * 16]);
            }
        }
        rows
    }

    /// Training-mode forward pass (batch statistics, caches kept for
    /// [`Generator::backward`]). `z` is row-major `[batch, latent_dim]`.
    pub fn forward_train(&mut self, z: &[T], labels: &[usize]) -> Result<FeatureMap<T>> {
        let batch = labels.len();
        let rows = self.input_rows(z, labels)?;
        let slope = T::from_f64(self.config.leaky_slope);
        let projected = self.project.forward(&rows, batch);
        let mut x = self.rows_to_grid(&projected, batch);
        if let Some(bn) = &mut self.project_norm {
            bn.forward_train(&mut x);
        }
        leaky_relu_inplace(&mut x.data, slope);
        self.project_out = Some(x.clone());
        let n = self.blocks.len();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let mut y = block.conv.forward(&x);
            if let Some(bn) = &mut block.norm {
                bn.forward_train(&mut y);
            }
            if i + 1 == n {
                tanh_inplace(&mut y.data);
            } else {
                leaky_relu_inplace(&mut y.data, slope);
            }
            block.out = Some(y.clone());
            x = y;
        }
        Ok(x)
    }

    /// Backpropagate the gradient of the output images, accumulating
    /// parameter gradients.
    pub fn backward(&mut self, mut dy: FeatureMap<T>) {
        let slope = T::from_f64(self.config.leaky_slope);
        let n = self.blocks.len();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            let out = block.out.as_ref().expect("generator backward before forward");
            if i + 1 == n {
                tanh_backward(&out.data, &mut dy.data);
            } else {
                leaky_relu_backward(&out.data, &mut dy.data, slope);
            }
            if let Some(bn) = &mut block.norm {
                bn.backward(&mut dy, true);
            }
            dy = block
                .conv
                .backward(&dy, true, true)
                .expect("input grad requested");
        }
        let out = self
            .project_out
            .as_ref()
            .expect("generator backward before forward");
        leaky_relu_backward(&out.data, &mut dy.data, slope);
        if let Some(bn) = &mut self.project_norm {
            bn.backward(&mut dy, true);
        }
        let drows = self.grid_to_rows(&dy);
        self.project.backward(&drows, true, false);
    }

    /// Inference with running normalization statistics; each sample's
    /// output is independent of the rest of the batch.
    pub fn infer(&self, z: &[T], labels: &[usize]) -> Result<FeatureMap<T>> {
        let batch = labels.len();
        let rows = self.input_rows(z, labels)?;
        let slope = T::from_f64(self.config.leaky_slope);
        let mut x = self.rows_to_grid(&self.project.infer(&rows, batch), batch);
        if let Some(bn) = &self.project_norm {
            bn.infer(&mut x);
        }
        leaky_relu_inplace(&mut x.data, slope);
        let n = self.blocks.len();
        for (i, block) in self.blocks.iter().enumerate() {
            let mut y = block.conv.infer(&x);
            if let Some(bn) = &block.norm {
                bn.infer(&mut y);
            }
            if i + 1 == n {
                tanh_inplace(&mut y.data);
            } else {
                leaky_relu_inplace(&mut y.data, slope);
            }
            x = y;
        }
        Ok(x)
    }

    pub fn clear_caches(&mut self) {
        self.project.clear_cache();
        self.project_out = None;
        if let Some(bn) = &mut self.project_norm {
            bn.clear_cache();
        }
        for b in &mut self.blocks {
            b.conv.clear_cache();
            b.out = None;
            if let Some(bn) = &mut b.norm {
                bn.clear_cache();
            }
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.project.params();
        if let Some(bn) = &self.project_norm {
            v.extend(bn.params());
        }
        for b in &self.blocks {
            v.extend(b.conv.params());
            if let Some(bn) = &b.norm {
                v.extend(bn.params());
            }
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.project.params_mut();
        if let Some(bn) = &mut self.project_norm {
            v.extend(bn.params_mut());
        }
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            if let Some(bn) = &mut b.norm {
                v.extend(bn.params_mut());
            }
        }
        v
    }

    /// Running normalization statistics.
    pub fn buffers(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        if let Some(bn) = &self.project_norm {
            v.extend(bn.buffers());
        }
        for b in &self.blocks {
            if let Some(bn) = &b.norm {
                v.extend(bn.buffers());
            }
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        if let Some(bn) = &mut self.project_norm {
            v.extend(bn.buffers_mut());
        }
        for b in &mut self.blocks {
            if let Some(bn) = &mut b.norm {
                v.extend(bn.buffers_mut());
            }
        }
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Parameters followed by buffers.
    pub fn tensors_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.project.params_mut();
        if let Some(bn) = &mut self.project_norm {
            v.extend(bn.tensors_mut());
        }
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            if let Some(bn) = &mut b.norm {
                v.extend(bn.tensors_mut());
            }
        }
        v
    }

    /// Generate one image per `(z, class)` pair.
    pub fn generate(&self, latents: &[LatentVector], labels: &[ConditionLabel]) -> Result<Vec<NetworkImage>> {
        if latents.len() != labels.len() {
            return Err(Error::Domain(format!(
                "{} latents for {} labels",
                latents.len(),
                labels.len()
            )));
        }
        let l = self.config.latent_dim;
        if let Some(z) = latents.iter().find(|z| z.0.len() != l) {
            return Err(Error::Domain(format!("latent length {} != {l}", z.0.len())));
        }
        let z: Vec<T> = latents
            .iter()
            .flat_map(|z| z.0.iter().map(|&v| T::from_f64(v as f64)))
            .collect();
        let idx: Vec<usize> = labels.iter().map(|c| c.0).collect();
        let out = self.infer(&z, &idx)?;
        Ok(feature_map_to_images(&out))
    }

    pub fn generate_one(&self, z: &LatentVector, c: ConditionLabel) -> Result<NetworkImage> {
        Ok(self.generate(std::slice::from_ref(z), &[c])?.remove(0))
    }
}

/// Split a `3 x N x S x S` map into per-sample planar images.
pub fn feature_map_to_images<T: Scalar>(fm: &FeatureMap<T>) -> Vec<NetworkImage> {
    let (n, s) = (fm.batch, fm.height);
    (0..n)
        .map(|i| {
            let mut data = Vec::with_capacity(3 * s * s);
            for c in 0..fm.channels {
                let start = (c * n + i) * s * s;
                data.extend(fm.data[start..start + s * s].iter().map(|v| v.as_f64() as f32));
            }
            NetworkImage { size: s, data }
        })
        .collect()
}

/// Stack planar images into a `3 x N x S x S` map.
pub fn images_to_feature_map<T: Scalar>(images: &[&NetworkImage]) -> FeatureMap<T> {
    let n = images.len();
    let s = images.first().map_or(0, |i| i.size);
    let mut fm = FeatureMap::zeros(3, n, s, s);
    for (i, img) in images.iter().enumerate() {
        for c in 0..3 {
            let dst = &mut fm.data[(c * n + i) * s * s..(c * n + i + 1) * s * s];
            for (d, &v) in dst.iter_mut().zip(&img.data[c * s * s..(c + 1) * s * s]) {
                *d = T::from_f64(v as f64);
            }
        }
    }
    fm
}

#[derive(Debug, Clone)]
struct DownBlock<T> {
    conv: Conv2d<T>,
    norm: Option<BatchNorm<T>>,
    out: Option<FeatureMap<T>>,
}

/// Conditional discriminator network.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    config: NetworkConfig,
    blocks: Vec<DownBlock<T>>,
    head: Dense<T>,
    feature_shape: Option<(usize, usize)>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = config.discriminator_channels();
        let mut cin = 3 + config.num_classes;
        let mut blocks = Vec::with_capacity(ch.len());
        for (i, &cout) in ch.iter().enumerate() {
            let norm = config.normalization && i > 0;
            blocks.push(DownBlock {
                conv: Conv2d::new(
                    &format!("d.down{i}"),
                    cin,
                    cout,
                    ConvGeometry::HALVING,
                    !norm,
                    INIT_STD,
                    &mut rng,
                ),
                norm: norm.then(|| BatchNorm::new(&format!("d.down{i}_norm"), cout)),
                out: None,
            });
            cin = cout;
        }
        let head = Dense::new("d.head", cin * 64, 1, INIT_STD, &mut rng);
        Ok(Self {
            config: *config,
            blocks,
            head,
            feature_shape: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn down_block_count(&self) -> usize {
        self.blocks.len()
    }

    fn conditioned_input(&self, images: &FeatureMap<T>, labels: &[usize]) -> Result<FeatureMap<T>> {
        let (s, k) = (self.config.image_size, self.config.num_classes);
        if images.channels != 3 || images.height != s || images.width != s {
            return Err(Error::Domain(format!(
                "discriminator expects 3x{s}x{s} images, got {}x{}x{}",
                images.channels, images.height, images.width
            )));
        }
        if images.batch != labels.len() {
            return Err(Error::Domain("image/label batch size mismatch".into()));
        }
        check_labels(labels, k)?;
        let mut x = FeatureMap::zeros(3 + k, images.batch, s, s);
        x.data[..images.data.len()].copy_from_slice(&images.data);
        let ss = s * s;
        for (n, &c) in labels.iter().enumerate() {
            let start = ((3 + c) * images.batch + n) * ss;
            x.data[start..start + ss].fill(T::one());
        }
        Ok(x)
    }

    fn flatten(fm: &FeatureMap<T>) -> Vec<T> {
        let (c, n, p) = (fm.channels, fm.batch, fm.height * fm.width);
        let mut rows = vec![T::zero(); fm.data.len()];
        for i in 0..n {
            for ch in 0..c {
                rows[(i * c + ch) * p..(i * c + ch + 1) * p]
                    .copy_from_slice(&fm.data[(ch * n + i) * p..(ch * n + i + 1) * p]);
            }
        }
        rows
    }

    /// Training-mode forward pass returning one logit per sample.
    pub fn forward_train(&mut self, images: &FeatureMap<T>, labels: &[usize]) -> Result<Vec<T>> {
        let mut x = self.conditioned_input(images, labels)?;
        let slope = T::from_f64(self.config.leaky_slope);
        for block in &mut self.blocks {
            let mut y = block.conv.forward(&x);
            if let Some(bn) = &mut block.norm {
                bn.forward_train(&mut y);
            }
            leaky_relu_inplace(&mut y.data, slope);
            block.out = Some(y.clone());
            x = y;
        }
        self.feature_shape = Some((x.channels, x.height));
        Ok(self.head.forward(&Self::flatten(&x), x.batch))
    }

    /// Backpropagate logit gradients. Returns the gradient with respect to
    /// the three image channels when `input_grad` is set.
    pub fn backward(&mut self, dlogits: &[T], param_grads: bool, input_grad: bool) -> Option<FeatureMap<T>> {
        let slope = T::from_f64(self.config.leaky_slope);
        let (c, hw) = self.feature_shape.expect("discriminator backward before forward");
        let batch = dlogits.len();
        let drows = self
            .head
            .backward(dlogits, param_grads, true)
            .expect("input grad requested");
        let p = hw * hw;
        let mut dy = FeatureMap::zeros(c, batch, hw, hw);
        for i in 0..batch {
            for ch in 0..c {
                dy.data[(ch * batch + i) * p..(ch * batch + i + 1) * p]
                    .copy_from_slice(&drows[(i * c + ch) * p..(i * c + ch + 1) * p]);
            }
        }
        let nblocks = self.blocks.len();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            let out = block.out.as_ref().expect("discriminator backward before forward");
            leaky_relu_backward(&out.data, &mut dy.data, slope);
            if let Some(bn) = &mut block.norm {
                bn.backward(&mut dy, param_grads);
            }
            let need_input = i > 0 || input_grad;
            dy = block.conv.backward(&dy, param_grads, need_input)?;
            if i == 0 {
                debug_assert_eq!(nblocks, self.config.discriminator_down_blocks());
            }
        }
        // keep only the image channels; the indicator planes are constants
        let s = dy.height;
        dy.data.truncate(3 * batch * s * s);
        dy.channels = 3;
        Some(dy)
    }

    /// Inference-mode logits.
    pub fn infer_logits(&self, images: &FeatureMap<T>, labels: &[usize]) -> Result<Vec<T>> {
        let mut x = self.conditioned_input(images, labels)?;
        let slope = T::from_f64(self.config.leaky_slope);
        for block in &self.blocks {
            let mut y = block.conv.infer(&x);
            if let Some(bn) = &block.norm {
                bn.infer(&mut y);
            }
            leaky_relu_inplace(&mut y.data, slope);
            x = y;
        }
        Ok(self.head.infer(&Self::flatten(&x), x.batch))
    }

    /// Probability-of-real score per `(image, class)` pair.
    pub fn score(&self, images: &[&NetworkImage], labels: &[ConditionLabel]) -> Result<Vec<f64>> {
        let s = self.config.image_size;
        if let Some(img) = images.iter().find(|i| i.size != s || i.data.len() != 3 * s * s) {
            return Err(Error::Domain(format!(
                "discriminator expects {s}x{s} images, got {}x{}",
                img.size, img.size
            )));
        }
        let fm = images_to_feature_map::<T>(images);
        let idx: Vec<usize> = labels.iter().map(|c| c.0).collect();
        Ok(self
            .infer_logits(&fm, &idx)?
            .into_iter()
            .map(|l| sigmoid(l).as_f64())
            .collect())
    }

    pub fn clear_caches(&mut self) {
        for b in &mut self.blocks {
            b.conv.clear_cache();
            b.out = None;
            if let Some(bn) = &mut b.norm {
                bn.clear_cache();
            }
        }
        self.head.clear_cache();
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend(b.conv.params());
            if let Some(bn) = &b.norm {
                v.extend(bn.params());
            }
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            if let Some(bn) = &mut b.norm {
                v.extend(bn.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<&Param<T>> {
        self.blocks
            .iter()
            .filter_map(|b| b.norm.as_ref())
            .flat_map(|bn| bn.buffers())
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        self.blocks
            .iter_mut()
            .filter_map(|b| b.norm.as_mut())
            .flat_map(|bn| bn.buffers_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Parameters followed by buffers.
    pub fn tensors_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            if let Some(bn) = &mut b.norm {
                v.extend(bn.tensors_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }
}

/// Generator and discriminator pair sharing one configuration.
#[derive(Debug, Clone)]
pub struct Networks<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Scalar> Networks<T> {
    /// Seeded initialization: identical `(config, seed)` gives identical parameters.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(config, derive_seed(&[seed, 0x47]))?,
            discriminator: Discriminator::new(config, derive_seed(&[seed, 0x44]))?,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        self.generator.config()
    }

    /// Every tensor (parameters and buffers) keyed by its layer name.
    pub fn state(&self) -> BTreeMap<String, (Vec<usize>, Vec<T>)> {
        let g = self
            .generator
            .params()
            .into_iter()
            .chain(self.generator.buffers());
        let d = self
            .discriminator
            .params()
            .into_iter()
            .chain(self.discriminator.buffers());
        g.chain(d)
            .map(|p| (p.name.clone(), (p.shape.clone(), p.value.clone())))
            .collect()
    }

    /// Overwrite every tensor from `state`, validating names and shapes.
    pub fn load_state<U: Scalar>(&mut self, state: &BTreeMap<String, (Vec<usize>, Vec<U>)>) -> Result<()> {
        let mut seen = 0;
        let mut targets = self.generator.tensors_mut();
        targets.extend(self.discriminator.tensors_mut());
        for p in targets {
            let (shape, values) = state
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if *shape != p.shape || values.len() != p.value.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    p.name, p.shape
                )));
            }
            for (dst, &src) in p.value.iter_mut().zip(values) {
                *dst = T::from_f64(src.as_f64());
            }
            seen += 1;
        }
        if seen != state.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, network expects {seen}",
                state.len()
            )));
        }
        Ok(())
    }

    /// Same networks in another precision.
    pub fn cast<U: Scalar>(&self) -> Result<Networks<U>> {
        let mut other = Networks::<U>::init(self.config(), 0)?;
        other.load_state(&self.state())?;
        Ok(other)
    }

    pub fn clear_caches(&mut self) {
        self.generator.clear_caches();
        self.discriminator.clear_caches();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(size: usize) -> NetworkConfig {
        NetworkConfig {
            image_size: size,
            num_classes: 10,
            latent_dim: 16,
            base_channels: 4,
            leaky_slope: 0.2,
            normalization: true,
        }
    }

    #[test]
    fn block_counts_follow_image_size() {
        for (size, up, down) in [(16, 2, 1), (32, 3, 2), (64, 4, 3), (128, 5, 4), (256, 6, 5)] {
            let c = cfg(size);
            assert_eq!(c.generator_up_blocks(), up);
            assert_eq!(c.discriminator_down_blocks(), down);
        }
        let full = NetworkConfig::default();
        assert_eq!(Generator::<f32>::new(&full, 1).unwrap().up_block_count(), 6);
        assert_eq!(Discriminator::<f32>::new(&full, 1).unwrap().down_block_count(), 5);
    }

    #[test]
    fn channel_plan_is_capped_and_ends_in_rgb() {
        let c = NetworkConfig::default();
        assert_eq!(c.generator_channels(), vec![512, 512, 512, 256, 128, 64, 3]);
        assert_eq!(c.discriminator_channels(), vec![64, 128, 256, 512, 512]);
    }

    #[test]
    fn invalid_sizes_are_config_errors() {
        for size in [100, 8, 0] {
            let c = NetworkConfig {
                image_size: size,
                ..cfg(16)
            };
            assert!(matches!(Networks::<f32>::init(&c, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn forward_shapes_and_ranges_for_all_sizes() {
        for size in [16, 32, 64, 128, 256] {
            let c = NetworkConfig {
                base_channels: 2,
                ..cfg(size)
            };
            let nets = Networks::<f32>::init(&c, 7).unwrap();
            let z = LatentVector::sample(c.latent_dim, 3);
            let img = nets.generator.generate_one(&z, ConditionLabel(9)).unwrap();
            assert_eq!(img.size, size);
            assert_eq!(img.data.len(), 3 * size * size);
            assert!(img.data.iter().all(|v| (-1.0..=1.0).contains(v)));
            let s = nets.discriminator.score(&[&img], &[ConditionLabel(9)]).unwrap();
            assert!(s[0] > 0.0 && s[0] < 1.0);
        }
    }

    #[test]
    fn batch_matches_single_calls() {
        let c = cfg(16);
        let nets = Networks::<f32>::init(&c, 2).unwrap();
        let zs: Vec<_> = (0..4).map(|i| LatentVector::sample(c.latent_dim, i)).collect();
        let labels: Vec<_> = [0, 3, 9, 3].map(ConditionLabel).to_vec();
        let batch = nets.generator.generate(&zs, &labels).unwrap();
        for (i, img) in batch.iter().enumerate() {
            let single = nets.generator.generate_one(&zs[i], labels[i]).unwrap();
            assert_eq!(&single, img);
        }
        let refs: Vec<&NetworkImage> = batch.iter().collect();
        let scores = nets.discriminator.score(&refs, &labels).unwrap();
        for i in 0..4 {
            let one = nets.discriminator.score(&[refs[i]], &[labels[i]]).unwrap();
            assert_eq!(one[0], scores[i]);
        }
    }

    #[test]
    fn bad_inputs_are_domain_errors() {
        let c = cfg(16);
        let nets = Networks::<f32>::init(&c, 2).unwrap();
        let z = LatentVector::sample(c.latent_dim, 0);
        assert!(matches!(
            nets.generator.generate_one(&z, ConditionLabel(10)),
            Err(Error::Domain(_))
        ));
        let short = LatentVector(vec![0.0; 3]);
        assert!(matches!(
            nets.generator.generate_one(&short, ConditionLabel(0)),
            Err(Error::Domain(_))
        ));
        let small = NetworkImage {
            size: 8,
            data: vec![0.0; 3 * 64],
        };
        assert!(matches!(
            nets.discriminator.score(&[&small], &[ConditionLabel(0)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let c = cfg(32);
        let a = Networks::<f32>::init(&c, 11).unwrap().state();
        let b = Networks::<f32>::init(&c, 11).unwrap().state();
        let other = Networks::<f32>::init(&c, 12).unwrap().state();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn cast_round_trip_preserves_values() {
        let c = cfg(16);
        let nets = Networks::<f32>::init(&c, 5).unwrap();
        let wide: Networks<f64> = nets.cast().unwrap();
        let back: Networks<f32> = wide.cast().unwrap();
        assert_eq!(nets.state(), back.state());
    }

    #[test]
    fn network_image_color_round_trip() {
        let img = ColorImage::new(
            2,
            2,
            vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let net = NetworkImage::from_color(&img).unwrap();
        assert_eq!(net.data[0], -1.0);
        assert_eq!(net.to_color(), img);
    }
}
