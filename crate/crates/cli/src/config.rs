//! Run configuration: loaded from an optional JSON file, then overridden by
//! flags, then echoed into every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use binsim_core::eval::CorpusSpec;
use binsim_core::ged::{LabelMode, DEFAULT_BOUNDARIES};
use binsim_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub pool_sizes: Vec<usize>,
    /// Negatives per positive in the matching protocol.
    pub ratio: usize,
    pub ged_boundaries: Vec<usize>,
    pub ged_labels: LabelMode,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            pool_sizes: vec![2, 10, 50, 100],
            ratio: 1,
            ged_boundaries: DEFAULT_BOUNDARIES.to_vec(),
            ged_labels: LabelMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: String::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed: 0,
            corpus: CorpusSpec::default(),
            train: TrainConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn input(&mut self, key: &str, path: PathBuf) -> PathBuf {
        self.inputs.insert(key.into(), path.clone());
        path
    }

    pub fn output(&mut self, key: &str, path: PathBuf) -> PathBuf {
        self.outputs.insert(key.into(), path.clone());
        path
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is plain data")
    }
}

/// Overwrites `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
