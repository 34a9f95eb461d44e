use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::config::{ConfigError, TrainConfig};
use crate::data::{make_batches, Batch, NliExample};
use crate::nli::{argmax, nli_loss, DsanModel};
use crate::tape::Tape;

use super::{adam_step, evaluate, AdamState, TrainError};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,valid_acc,seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    /// Gold probabilities that had to be clamped in the loss.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Example-weighted mean of the batch losses.
    pub loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub accuracy: f64,
    pub clamped: usize,
}

/// The model plus optimizer state. Batches are drawn in a fresh order each
/// epoch from a stream derived from the training seed.
#[derive(Debug)]
pub struct Trainer {
    pub model: DsanModel,
    pub config: TrainConfig,
    pub state: AdamState,
    pub epoch: usize,
    dropout_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: DsanModel, config: TrainConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let state = AdamState::new(&model.params);
        let dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d0d0);
        Ok(Self {
            model,
            config,
            state,
            epoch: 0,
            dropout_rng,
        })
    }

    /// Forward, backward and one optimizer step on a single batch.
    pub fn train_batch(&mut self, batch: &Batch) -> Result<BatchStats, TrainError> {
        let rng = std::mem::replace(&mut self.dropout_rng, ChaCha8Rng::seed_from_u64(0));
        let mut tape = Tape::train(rng);
        let result = self.step_on(&mut tape, batch);
        self.dropout_rng = tape.into_rng().expect("training tape keeps its generator");
        result
    }

    fn step_on(&mut self, tape: &mut Tape, batch: &Batch) -> Result<BatchStats, TrainError> {
        let p = self.model.params.bind(tape, true)?;
        let fwd = self.model.forward(tape, &p, batch)?;
        let (loss, clamped) = nli_loss(tape, fwd.output.probs, &batch.labels)?;
        let probs = tape.value(fwd.output.probs);
        let correct = batch
            .labels
            .iter()
            .enumerate()
            .filter(|(i, l)| argmax(probs.row(*i)) == l.index())
            .count();
        let loss_value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let dense: Vec<Vec<f64>> = p
            .vars()
            .iter()
            .zip(self.model.params.tensors())
            .map(|(v, t)| grads.dense(*v, t.len()))
            .collect();
        adam_step(&mut self.model.params, &dense, &mut self.state, &self.config)?;
        Ok(BatchStats {
            loss: loss_value,
            correct,
            count: batch.len(),
            clamped,
        })
    }

    /// One pass over `examples` in shuffled batches.
    pub fn run_epoch(&mut self, examples: &[NliExample]) -> Result<EpochStats, TrainError> {
        if examples.is_empty() {
            return Err(ConfigError("training set is empty".into()).into());
        }
        let order_seed = self.config.seed.wrapping_add(self.epoch as u64);
        let batches = make_batches(examples, self.config.batch_size, true, order_seed);
        let (mut loss, mut correct, mut clamped) = (0.0, 0, 0);
        for batch in &batches {
            let s = self.train_batch(batch)?;
            loss += s.loss * s.count as f64;
            correct += s.correct;
            clamped += s.clamped;
        }
        self.epoch += 1;
        if clamped > 0 {
            log::warn!("epoch {}: {clamped} gold probabilities clamped in the loss", self.epoch);
        }
        let n = examples.len() as f64;
        Ok(EpochStats {
            loss: loss / n,
            accuracy: correct as f64 / n,
            clamped,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid_acc: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Runs `trainer.config.epochs` epochs. When `out_dir` is given, appends a
/// row per epoch to `metrics.csv` and writes `best.ckpt` each time the
/// validation accuracy improves (or after every epoch when no validation
/// set is supplied, keeping the last).
pub fn train_loop(
    trainer: &mut Trainer,
    train: &[NliExample],
    valid: &[NliExample],
    out_dir: Option<&Path>,
) -> Result<TrainSummary, TrainError> {
    if train.is_empty() {
        return Err(ConfigError("training set is empty".into()).into());
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("metrics.csv");
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            writeln!(w, "{METRICS_HEADER}").map_err(io_err(&path))?;
            Some((w, path))
        }
        None => None,
    };

    let mut summary = TrainSummary {
        history: Vec::new(),
        best_epoch: None,
        best_valid_acc: None,
        best_checkpoint: None,
    };
    for _ in 0..trainer.config.epochs {
        let start = Instant::now();
        let stats = trainer.run_epoch(train)?;
        let valid_acc = if valid.is_empty() {
            None
        } else {
            evaluate(&trainer.model, valid, trainer.config.batch_size, false)?.accuracy()
        };
        let record = EpochRecord {
            epoch: trainer.epoch,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            valid_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.6} train acc {:.4} valid acc {}",
            record.epoch,
            record.train_loss,
            record.train_acc,
            record.valid_acc.map_or("-".to_string(), |a| format!("{a:.4}"))
        );

        let improved = match (valid_acc, summary.best_valid_acc) {
            (Some(a), Some(best)) => a > best,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            summary.best_epoch = Some(record.epoch);
            summary.best_valid_acc = valid_acc;
            if let Some(dir) = out_dir {
                let path = dir.join("best.ckpt");
                save_checkpoint(&path, &trainer.model)?;
                summary.best_checkpoint = Some(path);
            }
        }
        if let Some((w, path)) = metrics.as_mut() {
            writeln!(
                w,
                "{},{},{},{},{:.3}",
                record.epoch,
                record.train_loss,
                record.train_acc,
                record.valid_acc.map_or(String::new(), |a| a.to_string()),
                record.seconds
            )
            .and_then(|_| w.flush())
            .map_err(io_err(path))?;
        }
        summary.history.push(record);
    }
    Ok(summary)
}
