//! Self-describing checkpoint archive.
//!
//! Layout: the magic line `POROGEN-CKPT-1\n`, a little-endian `u64` header
//! length, a JSON header, then a blob of little-endian `f32` tensors whose
//! names, shapes and offsets are listed in the header.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cgan::{NetworkConfig, Networks};
use crate::corpus::{hex_digest, PorosityBinning};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamMoments, Param};
use crate::training::TrainingConfig;

pub const MAGIC: &[u8] = b"POROGEN-CKPT-1\n";

/// Trained (or freshly initialized) model plus everything needed to resume
/// or interpret it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub networks: Networks<f32>,
    pub binning: PorosityBinning,
    pub generator_opt: Adam<f32>,
    pub discriminator_opt: Adam<f32>,
    pub epoch: u64,
    pub seed: u64,
    pub manifest_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    config: NetworkConfig,
    binning: PorosityBinning,
    epoch: u64,
    seed: u64,
    manifest_digest: String,
    generator_opt: OptimizerHeader,
    discriminator_opt: OptimizerHeader,
    tensors: Vec<TensorEntry>,
}

fn opt_header(opt: &Adam<f32>) -> OptimizerHeader {
    OptimizerHeader {
        lr: opt.lr as f64,
        beta1: opt.beta1 as f64,
        beta2: opt.beta2 as f64,
        eps: opt.eps as f64,
        step: opt.step,
    }
}

impl Checkpoint {
    /// Fresh networks at epoch 0.
    pub fn init(config: &NetworkConfig, binning: &PorosityBinning, seed: u64) -> Result<Self> {
        if binning.num_classes() != config.num_classes {
            return Err(Error::Config(format!(
                "binning has {} classes, network config {}",
                binning.num_classes(),
                config.num_classes
            )));
        }
        let networks = Networks::<f32>::init(config, seed)?;
        let t = TrainingConfig::default();
        let generator_opt = Adam::new(
            t.learning_rate,
            t.adam_beta1,
            t.adam_beta2,
            &networks.generator.params(),
        );
        let discriminator_opt = Adam::new(
            t.learning_rate,
            t.adam_beta1,
            t.adam_beta2,
            &networks.discriminator.params(),
        );
        Ok(Self {
            networks,
            binning: binning.clone(),
            generator_opt,
            discriminator_opt,
            epoch: 0,
            seed,
            manifest_digest: String::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        self.networks.config()
    }

    fn moment_tensors<'a>(
        prefix: &str,
        params: &[&'a Param<f32>],
        opt: &'a Adam<f32>,
    ) -> Vec<(String, Vec<usize>, &'a [f32])> {
        let mut out = Vec::new();
        for (p, mom) in params.iter().zip(&opt.moments) {
            out.push((format!("{prefix}.m.{}", p.name), p.shape.clone(), &mom.m[..]));
            out.push((format!("{prefix}.v.{}", p.name), p.shape.clone(), &mom.v[..]));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let state = self.networks.state();
        let gp = self.networks.generator.params();
        let dp = self.networks.discriminator.params();
        let mut tensors: Vec<(String, Vec<usize>, &[f32])> = state
            .iter()
            .map(|(name, (shape, values))| (name.clone(), shape.clone(), &values[..]))
            .collect();
        tensors.extend(Self::moment_tensors("opt.g", &gp, &self.generator_opt));
        tensors.extend(Self::moment_tensors("opt.d", &dp, &self.discriminator_opt));

        let mut entries = Vec::with_capacity(tensors.len());
        let mut blob = Vec::new();
        for (name, shape, values) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: blob.len(),
                len: values.len(),
            });
            for v in values.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: String::from_utf8_lossy(&MAGIC[..MAGIC.len() - 1]).into_owned(),
            config: *self.config(),
            binning: self.binning.clone(),
            epoch: self.epoch,
            seed: self.seed,
            manifest_digest: self.manifest_digest.clone(),
            generator_opt: opt_header(&self.generator_opt),
            discriminator_opt: opt_header(&self.discriminator_opt),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header.len() + blob.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        bytes.extend_from_slice(&blob);
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| bad("missing POROGEN-CKPT-1 magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let rest = &rest[8..];
        if rest.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let blob = &rest[header_len..];
        header
            .config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let binning = header
            .binning
            .validated()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        for t in &header.tensors {
            let end = t.offset + t.len * 4;
            if end > blob.len() || t.shape.iter().product::<usize>() != t.len {
                return Err(Error::Checkpoint(format!(
                    "tensor {} out of bounds or misshapen",
                    t.name
                )));
            }
            let values = blob[t.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(t.name.clone(), (t.shape.clone(), values));
        }
        let mut net_state = BTreeMap::new();
        let mut moments = BTreeMap::new();
        for (name, v) in tensors {
            if name.starts_with("opt.") {
                moments.insert(name, v.1);
            } else {
                net_state.insert(name, v);
            }
        }
        let mut networks = Networks::<f32>::init(&header.config, 0)?;
        networks.load_state(&net_state)?;
        let generator_opt = restore_opt(
            "opt.g",
            &header.generator_opt,
            &networks.generator.params(),
            &mut moments,
        )?;
        let discriminator_opt = restore_opt(
            "opt.d",
            &header.discriminator_opt,
            &networks.discriminator.params(),
            &mut moments,
        )?;
        if let Some(extra) = moments.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected optimizer tensor {extra}")));
        }
        if binning.num_classes() != header.config.num_classes {
            return Err(bad("binning and network disagree on class count"));
        }
        Ok(Self {
            networks,
            binning,
            generator_opt,
            discriminator_opt,
            epoch: header.epoch,
            seed: header.seed,
            manifest_digest: header.manifest_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

fn restore_opt(
    prefix: &str,
    head: &OptimizerHeader,
    params: &[&Param<f32>],
    store: &mut BTreeMap<String, Vec<f32>>,
) -> Result<Adam<f32>> {
    let mut opt = Adam::new(head.lr, head.beta1, head.beta2, params);
    opt.eps = head.eps as f32;
    opt.step = head.step;
    for (p, mom) in params.iter().zip(opt.moments.iter_mut()) {
        let mut take = |kind: &str| -> Result<Vec<f32>> {
            let key = format!("{prefix}.{kind}.{}", p.name);
            let v = store
                .remove(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {key}")))?;
            if v.len() != p.value.len() {
                return Err(Error::Checkpoint(format!(
                    "optimizer tensor {key} has wrong length"
                )));
            }
            Ok(v)
        };
        *mom = AdamMoments {
            m: take("m")?,
            v: take("v")?,
        };
    }
    Ok(opt)
}

/// Fresh epoch-0 checkpoint with `K` equal-width classes over `[0, 0.75]`.
pub fn init_networks(config: &NetworkConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let binning = PorosityBinning::uniform(config.num_classes, 0.0, 0.75, true)?;
    Checkpoint::init(config, &binning, seed)
}
