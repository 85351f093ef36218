//! Run configuration, read from TOML. Every field has a default, so an empty
//! file (or no file) is a valid configuration; unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mta_core::data::{ColumnMap, SyntheticConfig, DEFAULT_FRACTIONS, DEFAULT_MAX_LEN};
use mta_core::model::{AttentionInput, Hyperparams};
use mta_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Used when a subcommand is given no `--out`: outputs go to
    /// `<output_dir>/<subcommand>`.
    pub output_dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub budget: BudgetConfig,
    pub segment: SegmentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Impression log read by `ingest` when `--log` is absent.
    pub log: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Channels to keep. When absent, `num_channels` are drawn at random
    /// with `channel_seed`.
    pub channels: Option<Vec<String>>,
    pub num_channels: usize,
    pub channel_seed: u64,
    /// Most frequent values kept per covariate field.
    pub vocab_size: usize,
    pub max_len: usize,
    /// Train, validation and test shares.
    pub split_fractions: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            log: None,
            columns: ColumnMap::default(),
            channels: None,
            num_channels: 10,
            channel_seed: 2020,
            vocab_size: 100,
            max_len: DEFAULT_MAX_LEN,
            split_fractions: DEFAULT_FRACTIONS,
            split_seed: 2020,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub representation_size: usize,
    pub mlp_hidden_size: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub beta: f64,
    pub attention_input: AttentionInput,
    pub linear_phi: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = Hyperparams::new(1, vec![1]);
        ModelConfig {
            embedding_size: h.embedding_size,
            hidden_size: h.hidden_size,
            representation_size: h.representation_size,
            mlp_hidden_size: h.mlp_hidden_size,
            dropout: h.dropout,
            lambda: h.lambda,
            beta: h.beta,
            attention_input: h.attention_input,
            linear_phi: h.linear_phi,
        }
    }
}

impl ModelConfig {
    pub fn hyperparams(&self, num_channels: usize, cardinalities: Vec<usize>, max_len: usize) -> Hyperparams {
        Hyperparams {
            embedding_size: self.embedding_size,
            hidden_size: self.hidden_size,
            representation_size: self.representation_size,
            mlp_hidden_size: self.mlp_hidden_size,
            dropout: self.dropout,
            lambda: self.lambda,
            beta: self.beta,
            num_channels,
            max_len,
            cardinalities,
            attention_input: self.attention_input,
            linear_phi: self.linear_phi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub fractions: Vec<f64>,
    pub cost_scale: f64,
    /// Value of one conversion in the ROI numerator.
    pub value: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let s = mta_core::budget::SweepConfig::default();
        BudgetConfig {
            fractions: s.fractions,
            cost_scale: s.cost_scale,
            value: s.value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub seed: u64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig { seed: 2020 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
