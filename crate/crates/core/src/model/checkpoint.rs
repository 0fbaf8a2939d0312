//! Checkpoint files: a versioned JSON document holding the model
//! configuration, the variate count and every parameter tensor with its
//! shape.
//!
//! ```json
//! { "format": "daif-checkpoint", "version": 1,
//!   "config": { ...ModelConfig... }, "n_variates": 7, "seed": 1,
//!   "params": { "embed_original": { "weight": { "shape": [96,128], "data": [...] }, ... } } }
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InvertedModelParams, ModelConfig};
use crate::error::{Error, Result};

pub const FORMAT: &str = "daif-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub n_variates: usize,
    /// Training seed; also the base of evaluation augmentation streams.
    pub seed: u64,
    pub params: InvertedModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, n_variates: usize, seed: u64, params: InvertedModelParams) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config,
            n_variates,
            seed,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::config(format!("invalid checkpoint: {e}")))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                ck.format, ck.version
            )));
        }
        ck.params.validate(&ck.config, ck.n_variates)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
