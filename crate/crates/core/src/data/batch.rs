use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Label, NliExample, PAD};

/// Token ids padded to the longest sentence in the batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceBatch {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub pad_mask: Vec<Vec<bool>>,
}

impl SentenceBatch {
    pub fn new<S: AsRef<[usize]>>(sentences: &[S]) -> Self {
        let width = sentences.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        Self::with_width(sentences, width)
    }

    /// Pads every sentence to exactly `width` (at least the longest length).
    pub fn with_width<S: AsRef<[usize]>>(sentences: &[S], width: usize) -> Self {
        let width = width.max(sentences.iter().map(|s| s.as_ref().len()).max().unwrap_or(0));
        let mut ids = Vec::with_capacity(sentences.len());
        let mut lengths = Vec::with_capacity(sentences.len());
        let mut pad_mask = Vec::with_capacity(sentences.len());
        for s in sentences {
            let s = s.as_ref();
            let mut row = s.to_vec();
            row.resize(width, PAD);
            ids.push(row);
            lengths.push(s.len());
            pad_mask.push((0..width).map(|j| j < s.len()).collect());
        }
        Self { ids, lengths, pad_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Padded length shared by every row.
    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub premise: SentenceBatch,
    pub hypothesis: SentenceBatch,
    pub labels: Vec<Label>,
    /// Positions of the batch rows in the source example list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[NliExample], indices: &[usize]) -> Self {
        let premises: Vec<&[usize]> = indices.iter().map(|&i| examples[i].premise.as_slice()).collect();
        let hypotheses: Vec<&[usize]> = indices.iter().map(|&i| examples[i].hypothesis.as_slice()).collect();
        Self {
            premise: SentenceBatch::new(&premises),
            hypothesis: SentenceBatch::new(&hypotheses),
            labels: indices.iter().map(|&i| examples[i].label).collect(),
            indices: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Splits `examples` into batches of `batch_size` (the last one may be
/// short), optionally shuffled by a generator seeded with `seed`.
pub fn make_batches(examples: &[NliExample], batch_size: usize, shuffle: bool, seed: u64) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_examples(examples, idx))
        .collect()
}
