//! Adversarial training: one discriminator step then one generator step per
//! batch, binary cross-entropy on both, Adam on both.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cgan::{NetworkConfig, Networks};
use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, CorpusManifest, PorosityBinning};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adam, FeatureMap, Scalar};
use crate::seed::derive_seed;
use crate::segmentation::ColorImage;

/// Scores are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Real-label target becomes `1 - label_smoothing`.
    pub label_smoothing: f64,
    /// After this epoch the learning rate falls linearly, reaching
    /// `learning_rate / (E + 1 - s)` in the last epoch `E` of the run.
    /// `None` keeps it constant.
    #[serde(default)]
    pub lr_decay_from: Option<u64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            checkpoint_every: 10,
            label_smoothing: 0.0,
            lr_decay_from: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing {} outside [0, 0.5)",
                self.label_smoothing
            )));
        }
        Ok(())
    }

    /// Learning rate for `epoch` of a run whose last epoch is `last`.
    pub fn learning_rate_at(&self, epoch: u64, last: u64) -> f64 {
        match self.lr_decay_from {
            Some(s) if epoch > s && last >= epoch => {
                self.learning_rate * (last + 1 - epoch) as f64 / (last + 1 - s) as f64
            }
            _ => self.learning_rate,
        }
    }
}

/// Per-epoch training summary (one JSON line in the training log).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub seconds: f64,
}

/// Losses and mean scores of one [`train_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// `bce(real, 1) + bce(fake, 0)`
    pub d_loss: f64,
    /// `bce(fake, 1)` against the updated discriminator
    pub g_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Mean binary cross-entropy of scores in `(0, 1)` against `{0, 1}` targets.
pub fn bce_loss(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::Domain(format!(
            "bce needs equal non-empty lengths, got {} scores and {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let sum: f64 = scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let s = clamp_score(s);
            -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
        })
        .sum();
    Ok(sum / scores.len() as f64)
}

/// BCE of `sigmoid(logits)` against a constant target, with the gradient
/// with respect to each logit. Clamped scores contribute zero gradient.
fn bce_logits<T: Scalar>(logits: &[T], target: f64) -> (f64, Vec<T>, f64) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut mean_score = 0.0;
    let grads = logits
        .iter()
        .map(|&l| {
            let raw = sigmoid(l).as_f64();
            mean_score += raw;
            let s = clamp_score(raw);
            loss -= target * s.ln() + (1.0 - target) * (1.0 - s).ln();
            if raw == s {
                T::from_f64((raw - target) / n)
            } else {
                T::zero()
            }
        })
        .collect();
    (loss / n, grads, mean_score / n)
}

/// Row-major `[batch, latent_dim]` standard normal draws.
pub fn sample_latents<T: Scalar>(rng: &mut ChaCha8Rng, batch: usize, dim: usize) -> Vec<T> {
    (0..batch * dim)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Discriminator objective `bce(D(real), 1) + bce(D(G(z)), 0)` with its
/// gradients accumulated into the discriminator parameters (zeroed first).
/// Returns `(loss, mean D(real), mean D(fake))`.
pub fn discriminator_gradients<T: Scalar>(
    nets: &mut Networks<T>,
    real: &FeatureMap<T>,
    labels: &[usize],
    z: &[T],
    real_target: f64,
) -> Result<(f64, f64, f64)> {
    let fake = nets.generator.forward_train(z, labels)?;
    let d = &mut nets.discriminator;
    d.zero_grad();
    let logits = d.forward_train(real, labels)?;
    let (loss_real, grad, d_real) = bce_logits(&logits, real_target);
    d.backward(&grad, true, false);
    let logits = d.forward_train(&fake, labels)?;
    let (loss_fake, grad, d_fake) = bce_logits(&logits, 0.0);
    d.backward(&grad, true, false);
    Ok((loss_real + loss_fake, d_real, d_fake))
}

/// Generator objective `bce(D(G(z)), 1)` with gradients accumulated into
/// the generator parameters (zeroed first). Returns `(loss, mean D(fake))`.
pub fn generator_gradients<T: Scalar>(
    nets: &mut Networks<T>,
    labels: &[usize],
    z: &[T],
) -> Result<(f64, f64)> {
    nets.generator.zero_grad();
    let fake = nets.generator.forward_train(z, labels)?;
    let logits = nets.discriminator.forward_train(&fake, labels)?;
    let (loss, grad, score) = bce_logits(&logits, 1.0);
    let dimg = nets
        .discriminator
        .backward(&grad, false, true)
        .expect("image gradient requested");
    nets.generator.backward(dimg);
    Ok((loss, score))
}

/// One discriminator update followed by one generator update.
pub fn train_step(
    ckpt: &mut Checkpoint,
    real: &FeatureMap<f32>,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
    label_smoothing: f64,
) -> Result<StepLosses> {
    if labels.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let cfg = *ckpt.config();
    if real.batch != labels.len() || real.height != cfg.image_size || real.channels != 3 {
        return Err(Error::Domain(format!(
            "batch of {}x{}x{} images for {} labels does not fit a {}px network",
            real.channels,
            real.height,
            real.width,
            labels.len(),
            cfg.image_size
        )));
    }
    ckpt.binning
        .check_class(labels.iter().copied().max().unwrap_or(0))?;

    let z = sample_latents(rng, labels.len(), cfg.latent_dim);
    let (d_loss, d_real, d_fake) =
        discriminator_gradients(&mut ckpt.networks, real, labels, &z, 1.0 - label_smoothing)?;
    ckpt.discriminator_opt
        .update(ckpt.networks.discriminator.params_mut());

    let z = sample_latents(rng, labels.len(), cfg.latent_dim);
    let (g_loss, _) = generator_gradients(&mut ckpt.networks, labels, &z)?;
    ckpt.generator_opt.update(ckpt.networks.generator.params_mut());
    ckpt.networks.clear_caches();
    Ok(StepLosses {
        d_loss,
        g_loss,
        d_real,
        d_fake,
    })
}

/// Tiles held as 8-bit RGB, ready to be batched into network range.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub tile_size: usize,
    pub binning: PorosityBinning,
    pub manifest_digest: String,
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

impl TrainingSet {
    fn push(&mut self, img: &ColorImage, class: usize) {
        self.pixels.extend_from_slice(img.to_rgb8().as_raw());
        self.labels.push(class);
    }

    /// Non-holdout tiles of an in-memory corpus, quantized as they would
    /// be on disk.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut set = Self {
            tile_size: corpus.tile_size,
            binning: corpus.binning.clone(),
            manifest_digest: corpus.manifest().digest(),
            pixels: Vec::new(),
            labels: Vec::new(),
        };
        for t in corpus.tiles.iter().filter(|t| !t.holdout) {
            set.push(&t.image, t.class_index);
        }
        set
    }

    /// Non-holdout tiles of a corpus directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = CorpusManifest::load(dir)?;
        let mut set = Self {
            tile_size: manifest.tile_size,
            binning: manifest.binning.clone(),
            manifest_digest: manifest.digest(),
            pixels: Vec::new(),
            labels: Vec::new(),
        };
        for rec in manifest.tiles.iter().filter(|r| !r.holdout) {
            let img = ColorImage::load_png(&manifest.tile_path(dir, rec))?;
            if img.height() != manifest.tile_size || img.width() != manifest.tile_size {
                return Err(Error::Data(format!(
                    "tile {} is {}x{}, manifest says {}",
                    rec.id,
                    img.height(),
                    img.width(),
                    manifest.tile_size
                )));
            }
            set.push(&img, rec.class_index);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Stack the given tiles into a `3 x N x S x S` map in `[-1, 1]`.
    pub fn batch(&self, indices: &[usize]) -> (FeatureMap<f32>, Vec<usize>) {
        let s = self.tile_size;
        let n = indices.len();
        let ss = s * s;
        let mut fm = FeatureMap::zeros(3, n, s, s);
        for (j, &i) in indices.iter().enumerate() {
            let px = &self.pixels[i * ss * 3..(i + 1) * ss * 3];
            for c in 0..3 {
                let dst = &mut fm.data[(c * n + j) * ss..(c * n + j + 1) * ss];
                for (p, d) in dst.iter_mut().enumerate() {
                    *d = px[p * 3 + c] as f32 / 127.5 - 1.0;
                }
            }
        }
        (fm, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Epoch-`e` visiting order; depends only on `(seed, epoch, n)`.
pub fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
        seed, epoch, 0x5fff,
    ])));
    order
}

/// Where periodic checkpoints and the JSON-lines log go.
#[derive(Debug, Clone)]
pub struct TrainingOutput {
    pub dir: PathBuf,
}

impl TrainingOutput {
    pub const LOG_FILE: &'static str = "train_log.jsonl";
    pub const FINAL: &'static str = "final.ckpt";

    pub fn epoch_path(&self, epoch: u64) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:04}.ckpt"))
    }

    pub fn final_path(&self) -> PathBuf {
        self.dir.join(Self::FINAL)
    }
}

/// Train fresh networks on `data`.
pub fn train(
    data: &TrainingSet,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainingConfig,
    output: Option<&TrainingOutput>,
) -> Result<(Checkpoint, Vec<EpochReport>)> {
    net_cfg.validate()?;
    train_cfg.validate()?;
    if data.binning.num_classes() != net_cfg.num_classes {
        return Err(Error::Config(format!(
            "corpus has {} classes but the network is configured for {}",
            data.binning.num_classes(),
            net_cfg.num_classes
        )));
    }
    if data.tile_size != net_cfg.image_size {
        return Err(Error::Config(format!(
            "corpus tiles are {}px but the network expects {}px",
            data.tile_size, net_cfg.image_size
        )));
    }
    let mut ckpt = Checkpoint::init(net_cfg, &data.binning, train_cfg.seed)?;
    ckpt.manifest_digest = data.manifest_digest.clone();
    continue_training(ckpt, data, train_cfg, output)
}

/// Run `train_cfg.epochs` further epochs starting from `ckpt`.
pub fn continue_training(
    mut ckpt: Checkpoint,
    data: &TrainingSet,
    train_cfg: &TrainingConfig,
    output: Option<&TrainingOutput>,
) -> Result<(Checkpoint, Vec<EpochReport>)> {
    train_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    if data.binning != ckpt.binning || data.tile_size != ckpt.config().image_size {
        return Err(Error::Config(
            "corpus binning or tile size does not match the checkpoint".into(),
        ));
    }
    for opt in [&mut ckpt.generator_opt, &mut ckpt.discriminator_opt] {
        set_hyper(opt, train_cfg);
    }
    let mut log = match output {
        Some(out) => {
            fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
            let path = out.dir.join(TrainingOutput::LOG_FILE);
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };

    let mut reports = Vec::new();
    let first = ckpt.epoch + 1;
    let last = first + train_cfg.epochs - 1;
    for epoch in first..=last {
        let started = Instant::now();
        let lr = train_cfg.learning_rate_at(epoch, last);
        ckpt.generator_opt.lr = lr as f32;
        ckpt.discriminator_opt.lr = lr as f32;
        let order = epoch_permutation(train_cfg.seed, epoch, data.len());
        let mut sums = [0.0f64; 4];
        let mut steps = 0;
        for (step, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let (real, labels) = data.batch(chunk);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[train_cfg.seed, epoch, step as u64]));
            let l = train_step(&mut ckpt, &real, &labels, &mut rng, train_cfg.label_smoothing)?;
            for (s, v) in sums.iter_mut().zip([l.d_loss, l.g_loss, l.d_real, l.d_fake]) {
                *s += v;
            }
            steps += 1;
        }
        ckpt.epoch = epoch;
        let n = steps as f64;
        let report = EpochReport {
            epoch,
            d_loss: sums[0] / n,
            g_loss: sums[1] / n,
            d_real: sums[2] / n,
            d_fake: sums[3] / n,
            steps,
            learning_rate: lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: D {:.4} G {:.4} D(real) {:.3} D(fake) {:.3} [{:.1}s]",
            report.d_loss,
            report.g_loss,
            report.d_real,
            report.d_fake,
            report.seconds
        );
        if let Some((file, path)) = &mut log {
            let line = serde_json::to_string(&report)?;
            writeln!(file, "{line}").map_err(|e| Error::io(&*path, e))?;
        }
        if let Some(out) = output {
            if train_cfg.checkpoint_every > 0 && epoch % train_cfg.checkpoint_every == 0 {
                ckpt.save(&out.epoch_path(epoch))?;
            }
        }
        reports.push(report);
    }
    if let Some(out) = output {
        ckpt.save(&out.final_path())?;
    }
    Ok((ckpt, reports))
}

fn set_hyper(opt: &mut Adam<f32>, cfg: &TrainingConfig) {
    opt.lr = cfg.learning_rate as f32;
    opt.beta1 = cfg.adam_beta1 as f32;
    opt.beta2 = cfg.adam_beta2 as f32;
}
