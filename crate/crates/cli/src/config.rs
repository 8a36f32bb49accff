//! Layered pipeline configuration: defaults < config file < environment < flags.
//!
//! Environment variables and flags are merged by clap (every flag has a
//! `POROGEN_*` mirror), so this module only deals with defaults and files.

use std::fs;
use std::path::Path;

use porogen::cgan::NetworkConfig;
use porogen::corpus::PorosityBinning;
use porogen::evaluation::MarginMode;
use porogen::segmentation::HsvThresholds;
use porogen::training::TrainingConfig;
use porogen::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningConfig {
    pub classes: usize,
    pub lo: f64,
    pub hi: f64,
    pub clamp: bool,
    /// Explicit edges win over `classes`/`lo`/`hi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            lo: 0.0,
            hi: 0.75,
            clamp: true,
            edges: None,
        }
    }
}

impl BinningConfig {
    pub fn build(&self) -> Result<PorosityBinning> {
        match &self.edges {
            Some(edges) => PorosityBinning::new(edges.clone(), self.clamp),
            None => PorosityBinning::uniform(self.classes, self.lo, self.hi, self.clamp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub tile: usize,
    /// Defaults to `tile`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    pub balance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_per_class: Option<usize>,
    pub downsample: bool,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Synthetic corpora only.
    pub per_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_radius: Option<usize>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            tile: 256,
            stride: None,
            balance: true,
            target_per_class: None,
            downsample: false,
            holdout_fraction: 0.0,
            seed: 0,
            per_class: 500,
            blur_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub per_class: usize,
    pub margin: f64,
    pub margin_mode: MarginMode,
    pub seed: u64,
    pub allow_untrained: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            per_class: 100,
            margin: 0.10,
            margin_mode: MarginMode::Relative,
            seed: 0,
            allow_untrained: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { n: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellLogConfig {
    pub k_per_depth: usize,
    pub seed: u64,
}

impl Default for WellLogConfig {
    fn default() -> Self {
        Self {
            k_per_depth: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub segmentation: HsvThresholds,
    pub binning: BinningConfig,
    pub corpus: CorpusConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    pub generate: GenerateConfig,
    pub welllog: WellLogConfig,
}

/// A config plus the dotted keys the file set explicitly.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    file_keys: Vec<String>,
}

impl Loaded {
    pub fn file_sets(&self, key: &str) -> bool {
        self.file_keys.iter().any(|k| k == key)
    }
}

/// Defaults overlaid with `path` (TOML, or JSON when the extension is
/// `.json`). Unknown keys are rejected.
pub fn load(path: Option<&Path>) -> Result<Loaded> {
    let mut merged = serde_json::to_value(PipelineConfig::default())?;
    let mut file_keys = Vec::new();
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let overlay: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            let t: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t)?
        };
        if !overlay.is_object() {
            return Err(Error::Config(format!(
                "{}: top level must be a table",
                path.display()
            )));
        }
        collect_keys(&overlay, "", &mut file_keys);
        merge(&mut merged, overlay);
    }
    let config: PipelineConfig =
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
    Ok(Loaded { config, file_keys })
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn collect_keys(v: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = v {
        for (k, child) in map {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            collect_keys(child, &key, out);
            out.push(key);
        }
    }
}

impl PipelineConfig {
    /// Check every section, whatever subcommand runs.
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.binning.build()?;
        self.network.validate()?;
        self.training.validate()?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        let c = &self.corpus;
        if c.tile == 0 || c.stride == Some(0) || c.per_class == 0 {
            return Err(Error::Config(
                "corpus tile, stride and per_class must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&c.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction {} outside [0, 1)",
                c.holdout_fraction
            )));
        }
        let e = &self.evaluation;
        if e.per_class == 0 || !(e.margin >= 0.0 && e.margin.is_finite()) {
            return Err(Error::Config(
                "evaluation needs per_class >= 1 and margin >= 0".into(),
            ));
        }
        if self.generate.n == 0 || self.welllog.k_per_depth == 0 {
            return Err(Error::Config(
                "generate.n and welllog.k_per_depth must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
