//! Model and training hyperparameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

/// Where layer normalization sits relative to the attention, gate and
/// pooling projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionNorm {
    /// `LayerNorm(x·W)`.
    #[default]
    Output,
    /// `LayerNorm(x)·W`.
    Input,
    /// Plain `x·W`.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Word embedding width.
    pub d_e: usize,
    pub heads: usize,
    /// Position-wise FFN hidden width; must be `4·d_e`.
    pub d_ff: usize,
    /// Width of the ReLU layer in the classifier.
    pub d_h: usize,
    /// Weight of the distance mask; 0 disables it.
    pub alpha: f64,
    pub dropout: f64,
    pub projection_norm: ProjectionNorm,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_e: 300,
            heads: 5,
            d_ff: 1200,
            d_h: 300,
            alpha: 1.5,
            dropout: 0.1,
            projection_norm: ProjectionNorm::Output,
            ln_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for tests and smoke runs.
    pub fn toy() -> Self {
        Self {
            d_e: 20,
            heads: 2,
            d_ff: 80,
            d_h: 16,
            ..Self::default()
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_e / self.heads
    }

    /// Length of an encoded sentence vector.
    pub fn sentence_dim(&self) -> usize {
        4 * self.d_e
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.d_e < 2 || self.heads == 0 || self.d_h < 2 {
            return err(format!(
                "d_e ({}), heads ({}) and d_h ({}) must be positive (d_e, d_h >= 2)",
                self.d_e, self.heads, self.d_h
            ));
        }
        if !self.d_e.is_multiple_of(self.heads) {
            return err(format!("d_e ({}) is not divisible by heads ({})", self.d_e, self.heads));
        }
        if self.d_ff != 4 * self.d_e {
            return err(format!("d_ff ({}) must equal 4 * d_e ({})", self.d_ff, 4 * self.d_e));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return err(format!("alpha ({}) must be finite and non-negative", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout ({}) must lie in [0, 1)", self.dropout));
        }
        if !(self.ln_eps.is_finite() && self.ln_eps > 0.0) {
            return err(format!("ln_eps ({}) must be positive", self.ln_eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 10,
            seed: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError(format!("learning_rate ({}) must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ConfigError("batch_size and epochs must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(ConfigError(format!("{name} ({b}) must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(ConfigError(format!("adam_eps ({}) must be positive", self.adam_eps)));
        }
        Ok(())
    }
}
