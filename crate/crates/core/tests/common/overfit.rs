//! The synthetic overfit run: 32 keyword-labelled pairs at toy scale.

use dsan::train::{evaluate, Trainer};
use dsan::{ModelConfig, TrainConfig};

use super::{synthetic_corpus, toy_model_with};

pub const EXAMPLES: usize = 32;
pub const MAX_EPOCHS: usize = 200;
/// Training continues to at least this many epochs so the loss curve has
/// several full windows to compare.
pub const MIN_EPOCHS: usize = 50;
pub const WINDOW: usize = 10;

#[derive(Debug, Clone)]
pub struct OverfitRun {
    pub losses: Vec<f64>,
    /// First epoch (1-based) after which eval-mode train accuracy was 1.
    pub reached: Option<usize>,
    pub final_accuracy: f64,
}

pub fn run(seed: u64) -> OverfitRun {
    let (vocab, examples) = synthetic_corpus(EXAMPLES, seed);
    let model = toy_model_with(ModelConfig::toy(), vocab, seed);
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: MAX_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    let mut losses = Vec::new();
    let mut reached = None;
    let mut acc = 0.0;
    for epoch in 1..=MAX_EPOCHS {
        losses.push(trainer.run_epoch(&examples).unwrap().loss);
        acc = evaluate(&trainer.model, &examples, EXAMPLES, false).unwrap().accuracy().unwrap();
        if acc == 1.0 && reached.is_none() {
            reached = Some(epoch);
        }
        if reached.is_some() && epoch >= MIN_EPOCHS {
            break;
        }
    }
    OverfitRun {
        losses,
        reached,
        final_accuracy: acc,
    }
}
