//! Experiment files and the commands that execute them.
//!
//! An experiment is a versioned JSON document:
//!
//! ```json
//! {
//!   "version": 1,
//!   "dataset": { "name": "synth", "synth": { "n_variates": 4, "length": 4000 } },
//!   "model": { "backbone": "attention", "lookback": 96 },
//!   "train": { "learning_rate": 0.0001, "max_epochs": 10 },
//!   "augmentation": { "strategy": "ff", "top_k": 5 },
//!   "pred_lens": [96, 192],
//!   "seeds": [1, 2, 3],
//!   "output_dir": "runs/synth"
//! }
//! ```
//!
//! The dataset is either a CSV `path` (relative paths resolve against the
//! config file) or an inline `synth` specification. Unknown keys anywhere
//! are rejected with their full path.

mod commands;
mod results;

pub use commands::{
    run_augment_preview, run_bench, run_eval, run_synth, run_train, PreviewFiles, RunLog, SweepRow, TrainRun,
    SWEEP_HEADER,
};
pub use results::{average_rows, format_results, write_results, ResultRow, RESULTS_HEADER};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::data::{self, MultivariateSeries, SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{Backbone, ModelConfig};
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub split: SplitSpec,
}

/// Model hyperparameters shared by every prediction length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: Backbone,
    pub lookback: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub heads: usize,
    pub share_original_embedding: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            backbone: m.backbone,
            lookback: m.lookback,
            d_model: m.d_model,
            d_ff: m.d_ff,
            layers: m.layers,
            heads: m.heads,
            share_original_embedding: m.share_original_embedding,
        }
    }
}

/// Optimizer settings; the seed comes from the experiment's seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub gradient_clip: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            gradient_clip: t.gradient_clip,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Patch length of cross-variation patching.
    P,
    /// Retained frequencies of frequency filtering.
    K,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::P => "P",
            SweepAxis::K => "K",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

impl FromStr for Sweep {
    type Err = Error;

    /// Parses `AXIS=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (axis, list) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("sweep {s:?} must look like AXIS=LIST")))?;
        let axis = match axis.trim() {
            "P" | "p" => SweepAxis::P,
            "K" | "k" => SweepAxis::K,
            other => return Err(Error::config(format!("unknown sweep axis {other:?} (expected P or K)"))),
        };
        Ok(Sweep {
            axis,
            values: parse_list(list)?,
        })
    }
}

/// Parses a comma-separated list of integers.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid list entry {v:?} in {s:?}")))
        })
        .collect()
}

fn default_pred_lens() -> Vec<usize> {
    vec![96]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default = "default_pred_lens")]
    pub pred_lens: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write measured durations into history and results files. Off by
    /// default so reruns are byte-identical; durations always go to the log.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub sweep: Vec<Sweep>,
}

impl ExperimentConfig {
    /// Parses and validates a config document. Errors name the offending
    /// field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative dataset path resolves against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(p) = &cfg.dataset.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.dataset.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "version: unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        match (&self.dataset.path, &self.dataset.synth) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::config("dataset: exactly one of `path` and `synth` is required")),
        }
        if self.pred_lens.is_empty() || self.pred_lens.contains(&0) {
            return Err(Error::config("pred_lens: must be a non-empty list of positive lengths"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds: must not be empty"));
        }
        for &s in &self.pred_lens {
            self.model_config(s).validate()?;
        }
        self.train_config(0).validate()?;
        for sweep in &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config(format!("sweep: axis {} has no values", sweep.axis)));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, horizon: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            backbone: m.backbone,
            lookback: m.lookback,
            horizon,
            d_model: m.d_model,
            d_ff: m.d_ff,
            layers: m.layers,
            heads: m.heads,
            share_original_embedding: m.share_original_embedding,
            augmentation: self.augmentation.clone(),
        }
    }

    /// Model for one sweep cell: the axis selects the strategy.
    pub fn sweep_model_config(&self, axis: SweepAxis, value: usize, horizon: usize) -> ModelConfig {
        let mut cfg = self.model_config(horizon);
        match axis {
            SweepAxis::P => {
                cfg.augmentation.strategy = crate::augment::Strategy::Cvp;
                cfg.augmentation.patch_len = value;
            }
            SweepAxis::K => {
                cfg.augmentation.strategy = crate::augment::Strategy::Ff;
                cfg.augmentation.top_k = value;
            }
        }
        cfg
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed,
            gradient_clip: t.gradient_clip,
        }
    }

    pub fn load_dataset(&self) -> Result<MultivariateSeries> {
        match (&self.dataset.path, &self.dataset.synth) {
            (Some(p), _) => data::load_csv(p),
            (None, Some(spec)) => data::synth_generate(spec),
            (None, None) => Err(Error::config("dataset: no source given")),
        }
    }
}
