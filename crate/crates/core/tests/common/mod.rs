//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod oracle;
pub mod overfit;
pub mod case;
pub mod grads;
pub mod props;
pub mod trials;

use dsan::data::{EmbeddingTable, Label, NliExample, Vocabulary};
use dsan::params::ParamSet;
use dsan::{DsanModel, ModelConfig, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASE_SENTENCE: &str = "A lady stands outside of a Mexican market.";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Random embedding table for `vocab`, row 0 (padding) zero.
pub fn random_embeddings(vocab: &Vocabulary, d: usize, seed: u64) -> EmbeddingTable {
    let mut r = rng(seed);
    EmbeddingTable::new(random_tensor(&mut r, &[vocab.len(), d], 1.0)).unwrap()
}

pub fn toy_model_with(cfg: ModelConfig, vocab: Vocabulary, seed: u64) -> DsanModel {
    let emb = random_embeddings(&vocab, cfg.d_e, seed.wrapping_add(1000));
    DsanModel::new(cfg, vocab, emb, seed).unwrap()
}

pub fn toy_model(words: &[&str], seed: u64) -> DsanModel {
    toy_model_with(ModelConfig::toy(), Vocabulary::from_tokens(words.iter().copied()), seed)
}

/// Overwrites every parameter with random values: weights and biases in
/// ±`scale`, layer-norm gains in `[0.5, 1.5]`.
pub fn randomize(set: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = set.ids().collect();
    for id in ids {
        let gain = set.name(id).ends_with(".gain");
        for v in set.get_mut(id).data_mut() {
            *v = if gain { rng.gen_range(0.5..1.5) } else { rng.gen_range(-scale..scale) };
        }
    }
}

pub fn param<'a>(set: &'a ParamSet, name: &str) -> &'a Tensor {
    set.get(set.id(name).unwrap_or_else(|| panic!("no parameter {name}")))
}

const FILLERS: [&str; 12] = [
    "man", "woman", "dog", "plays", "runs", "in", "the", "park", "street", "guitar", "ball", "sits",
];
const KEYWORDS: [(&str, Label); 3] = [
    ("yes", Label::Entailment),
    ("no", Label::Contradiction),
    ("maybe", Label::Neutral),
];

/// Template pairs whose label is fixed by one keyword placed somewhere in
/// the hypothesis; everything else is filler.
pub fn synthetic_corpus(count: usize, seed: u64) -> (Vocabulary, Vec<NliExample>) {
    let vocab = Vocabulary::from_tokens(FILLERS.iter().chain(KEYWORDS.iter().map(|(k, _)| k)).copied());
    let mut r = rng(seed);
    let examples = (0..count)
        .map(|i| {
            let (kw, label) = KEYWORDS[i % 3];
            let plen = r.gen_range(3..=5);
            let premise: Vec<&str> = (0..plen).map(|_| *FILLERS.choose(&mut r).unwrap()).collect();
            let hlen = r.gen_range(2..=4);
            let mut hyp: Vec<&str> = (0..hlen).map(|_| *FILLERS.choose(&mut r).unwrap()).collect();
            let at = r.gen_range(0..=hyp.len());
            hyp.insert(at, kw);
            NliExample {
                premise: vocab.encode(&premise),
                hypothesis: vocab.encode(&hyp),
                label,
            }
        })
        .collect();
    (vocab, examples)
}

/// Non-increasing means over consecutive full blocks of `window` epochs.
pub fn block_means_non_increasing(losses: &[f64], window: usize) -> (bool, Vec<f64>) {
    let means: Vec<f64> = losses
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    (means.windows(2).all(|w| w[1] <= w[0]), means)
}

/// Path of a file under `tests/fixtures`.
pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The hand-built SNLI-format sample and the counts it was written with:
/// 14 records, 3 without a consensus label, 1 with a blank hypothesis.
pub const SNLI_SAMPLE: &str = "snli_dev_sample.jsonl";
pub const SNLI_SAMPLE_RECORDS: usize = 14;
pub const SNLI_SAMPLE_NO_CONSENSUS: usize = 3;
pub const SNLI_SAMPLE_EMPTY: usize = 1;
