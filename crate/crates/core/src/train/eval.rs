use std::io::Write;

use rayon::prelude::*;

use crate::config::ConfigError;
use crate::data::{make_batches, Batch, NliExample};
use crate::nli::{argmax, DsanModel, NUM_CLASSES};

use super::TrainError;

/// Eval-mode accuracy with a confusion matrix: `confusion[gold][predicted]`,
/// classes in `Label::ALL` order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl EvalReport {
    /// `None` for an empty dataset.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn merge(mut self, other: Self) -> Self {
        self.correct += other.correct;
        self.total += other.total;
        for (row, orow) in self.confusion.iter_mut().zip(other.confusion) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        self
    }
}

fn predict_batch(model: &DsanModel, batch: &Batch) -> Result<Vec<usize>, TrainError> {
    let probs = model.predict(batch)?;
    Ok((0..batch.len()).map(|i| argmax(probs.row(i))).collect())
}

/// Predicted class per example, in dataset order. With `parallel` the
/// batches are spread over the rayon pool; results are identical either way.
pub(crate) fn predictions(model: &DsanModel, examples: &[NliExample], batch_size: usize, parallel: bool) -> Result<Vec<usize>, TrainError> {
    if batch_size == 0 {
        return Err(ConfigError("batch_size must be positive".into()).into());
    }
    let batches = make_batches(examples, batch_size, false, 0);
    let per_batch: Vec<Vec<usize>> = if parallel {
        batches
            .par_iter()
            .map(|b| predict_batch(model, b))
            .collect::<Result<_, _>>()?
    } else {
        batches.iter().map(|b| predict_batch(model, b)).collect::<Result<_, _>>()?
    };
    Ok(per_batch.into_iter().flatten().collect())
}

pub fn evaluate(model: &DsanModel, examples: &[NliExample], batch_size: usize, parallel: bool) -> Result<EvalReport, TrainError> {
    let preds = predictions(model, examples, batch_size, parallel)?;
    Ok(tally(examples.iter().zip(&preds)))
}

fn tally<'a>(pairs: impl Iterator<Item = (&'a NliExample, &'a usize)>) -> EvalReport {
    pairs.fold(EvalReport::default(), |acc, (ex, &pred)| {
        let gold = ex.label.index();
        let mut one = EvalReport {
            correct: usize::from(gold == pred),
            total: 1,
            ..Default::default()
        };
        one.confusion[gold][pred] = 1;
        acc.merge(one)
    })
}

/// Accuracy over examples whose average sentence length falls in
/// `[lower, upper)`; the last bucket has no upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthBucket {
    pub lower: f64,
    pub upper: Option<f64>,
    pub count: usize,
    pub correct: usize,
}

impl LengthBucket {
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && self.upper.is_none_or(|u| x < u)
    }
}

/// Buckets examples by the mean of premise and hypothesis lengths. `edges`
/// must be strictly increasing; a leading edge of 0 is implied when the
/// first edge is positive.
pub fn evaluate_by_length(
    model: &DsanModel,
    examples: &[NliExample],
    edges: &[f64],
    batch_size: usize,
    parallel: bool,
) -> Result<Vec<LengthBucket>, TrainError> {
    let mut buckets = length_buckets(edges)?;
    let preds = predictions(model, examples, batch_size, parallel)?;
    for (ex, pred) in examples.iter().zip(preds) {
        let avg = ex.average_length();
        let b = buckets
            .iter_mut()
            .find(|b| b.contains(avg))
            .expect("buckets cover [0, inf)");
        b.count += 1;
        b.correct += usize::from(ex.label.index() == pred);
    }
    Ok(buckets)
}

/// Empty buckets for `edges`, validated as in [`evaluate_by_length`].
pub fn length_buckets(edges: &[f64]) -> Result<Vec<LengthBucket>, ConfigError> {
    if edges.iter().any(|e| !e.is_finite() || *e < 0.0) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError(format!(
            "bucket edges must be finite, non-negative and strictly increasing: {edges:?}"
        )));
    }
    let mut lowers = Vec::with_capacity(edges.len() + 1);
    if edges.first().is_none_or(|&e| e > 0.0) {
        lowers.push(0.0);
    }
    lowers.extend_from_slice(edges);
    Ok(lowers
        .iter()
        .enumerate()
        .map(|(i, &lower)| LengthBucket {
            lower,
            upper: lowers.get(i + 1).copied(),
            count: 0,
            correct: 0,
        })
        .collect())
}

/// CSV table `lower,upper,count,accuracy`; an open upper bound and the
/// accuracy of an empty bucket are left blank.
pub fn write_length_table<W: Write>(w: W, buckets: &[LengthBucket]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["lower", "upper", "count", "accuracy"])?;
    for b in buckets {
        out.write_record([
            b.lower.to_string(),
            b.upper.map_or(String::new(), |u| u.to_string()),
            b.count.to_string(),
            b.accuracy().map_or(String::new(), |a| a.to_string()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Gold label counts in `Label::ALL` order.
pub fn class_counts(examples: &[NliExample]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for ex in examples {
        counts[ex.label.index()] += 1;
    }
    counts
}
