//! Optimization, the epoch loop with checkpointing, and evaluation.

mod adam;
mod eval;
mod trainer;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::tensor::TensorError;

pub use adam::{adam_step, AdamState};
pub use eval::{class_counts, evaluate, evaluate_by_length, length_buckets, write_length_table, EvalReport, LengthBucket};
pub use trainer::{train_loop, BatchStats, EpochRecord, EpochStats, TrainSummary, Trainer, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite gradient in parameter {name}; step aborted")]
    NonFiniteGradient { name: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl TrainError {
    /// True for failures caused by NaN or infinite values.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteGradient { .. } | TrainError::Tensor(TensorError::NonFinite { .. })
        )
    }
}
