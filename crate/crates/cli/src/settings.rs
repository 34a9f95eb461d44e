//! Layered run settings: command-line flags over a TOML file over built-in
//! defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dsan::{ModelConfig, ProjectionNorm, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Contents of a `--config` file. Every table and key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentences: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Paths {
    /// Fills every unset entry from `fallback`.
    pub fn or(self, fallback: Paths) -> Paths {
        Paths {
            embeddings: self.embeddings.or(fallback.embeddings),
            train: self.train.or(fallback.train),
            valid: self.valid.or(fallback.valid),
            test: self.test.or(fallback.test),
            data: self.data.or(fallback.data),
            checkpoint: self.checkpoint.or(fallback.checkpoint),
            sentences: self.sentences.or(fallback.sentences),
            out: self.out.or(fallback.out),
        }
    }
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Output,
    Input,
    Off,
}

impl From<NormArg> for ProjectionNorm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Output => ProjectionNorm::Output,
            NormArg::Input => ProjectionNorm::Input,
            NormArg::Off => ProjectionNorm::Off,
        }
    }
}

/// Architecture flags; each overrides the file value when given.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Word embedding width (must match the embedding file)
    #[arg(long)]
    pub d_e: Option<usize>,
    /// Number of attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// Position-wise feed-forward width (4 x d_e)
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Classifier hidden width
    #[arg(long)]
    pub d_h: Option<usize>,
    /// Distance-mask weight; 0 turns the distance mask off
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Where layer normalization sits in the learned projections
    #[arg(long, value_enum)]
    pub projection_norm: Option<NormArg>,
}

impl ModelFlags {
    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        if let Some(v) = self.d_e {
            cfg.d_e = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.d_ff {
            cfg.d_ff = v;
        }
        if let Some(v) = self.d_h {
            cfg.d_h = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.projection_norm {
            cfg.projection_norm = v.into();
        }
        cfg
    }
}

/// Optimization flags; each overrides the file value when given.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization, shuffling and dropout
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
}

impl TrainFlags {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.adam_beta1 {
            cfg.adam_beta1 = v;
        }
        if let Some(v) = self.adam_beta2 {
            cfg.adam_beta2 = v;
        }
        if let Some(v) = self.adam_eps {
            cfg.adam_eps = v;
        }
        cfg
    }
}

/// What actually ran, written next to the outputs.
#[derive(Debug, Serialize)]
pub struct Effective<'a> {
    pub command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bucket_edges: Option<&'a [f64]>,
    pub model: &'a ModelConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<&'a TrainConfig>,
    pub paths: &'a Paths,
}

pub const ECHO_FILE: &str = "config.toml";

impl Effective<'_> {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(ECHO_FILE);
        let text = toml::to_string(self).map_err(|e| CliError::Data(format!("serializing settings: {e}")))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
