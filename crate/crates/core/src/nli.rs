//! Siamese sentence-pair classifier on top of the shared encoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ModelConfig};
use crate::data::{Batch, EmbeddingTable, Label, SentenceBatch, Vocabulary};
use crate::encoder::{EncoderOutput, EncoderParams};
use crate::masks::MaskCache;
use crate::params::{glorot, Bound, LayerNormParams, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError, MASK_THRESHOLD};

/// Probabilities below this are clamped before taking the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierParams {
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub norm: LayerNormParams,
    pub w_c: ParamId,
    pub b_c: ParamId,
}

impl ClassifierParams {
    pub fn register<R: Rng>(set: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<Self, ConfigError> {
        let f = 4 * cfg.sentence_dim();
        Ok(Self {
            w_r: set.register(format!("{prefix}.Wr"), glorot(rng, f, cfg.d_h))?,
            b_r: set.register(format!("{prefix}.br"), Tensor::zeros(&[cfg.d_h]))?,
            norm: LayerNormParams::register(set, &format!("{prefix}.ln"), cfg.d_h)?,
            w_c: set.register(format!("{prefix}.Wc"), glorot(rng, cfg.d_h, NUM_CLASSES))?,
            b_c: set.register(format!("{prefix}.bc"), Tensor::zeros(&[NUM_CLASSES]))?,
        })
    }
}

/// `[u; v; |u − v|; u ⊙ v]` row by row.
pub fn relation_features(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    if tape.value(u).shape() != tape.value(v).shape() {
        return Err(TensorError::Shape {
            op: "relation_features",
            lhs: tape.value(u).shape().to_vec(),
            rhs: tape.value(v).shape().to_vec(),
        });
    }
    let diff = tape.sub(u, v)?;
    let dist = tape.abs(diff)?;
    let prod = tape.mul(u, v)?;
    tape.concat_cols(&[u, v, dist, prod])
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierOutput {
    pub hidden: Var,
    pub logits: Var,
    pub probs: Var,
}

pub fn classify(tape: &mut Tape, p: &Bound, params: &ClassifierParams, cfg: &ModelConfig, features: Var) -> Result<ClassifierOutput> {
    let a = tape.matmul(features, p[params.w_r])?;
    let a = tape.add(a, p[params.b_r])?;
    let a = params.norm.apply(tape, p, a, cfg.ln_eps)?;
    let a = tape.relu(a)?;
    let hidden = tape.dropout(a, cfg.dropout)?;
    let logits = tape.matmul(hidden, p[params.w_c])?;
    let logits = tape.add(logits, p[params.b_c])?;
    let probs = tape.softmax_rows(logits, MASK_THRESHOLD)?;
    Ok(ClassifierOutput { hidden, logits, probs })
}

/// Mean cross-entropy of the gold labels. The second value counts gold
/// probabilities that fell under [`PROB_FLOOR`].
pub fn nli_loss(tape: &mut Tape, probs: Var, labels: &[Label]) -> Result<(Var, usize)> {
    let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    tape.nll_mean(probs, &targets, PROB_FLOOR)
}

#[derive(Debug, Clone)]
pub struct NliForward {
    pub premise: EncoderOutput,
    pub hypothesis: EncoderOutput,
    pub features: Var,
    pub output: ClassifierOutput,
}

/// Everything needed to run the model: configuration, trainable parameters,
/// the vocabulary and the frozen embedding table.
#[derive(Debug)]
pub struct DsanModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    masks: MaskCache,
}

impl DsanModel {
    /// Freshly initialized parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, embeddings: EmbeddingTable, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        if embeddings.dim() != config.d_e {
            return Err(ConfigError(format!(
                "embedding width {} does not match d_e {}",
                embeddings.dim(),
                config.d_e
            )));
        }
        if embeddings.vocab_size() != vocab.len() {
            return Err(ConfigError(format!(
                "embedding table has {} rows for a vocabulary of {}",
                embeddings.vocab_size(),
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::register(&mut params, &mut rng, "enc", &config)?;
        let classifier = ClassifierParams::register(&mut params, &mut rng, "cls", &config)?;
        let masks = MaskCache::new(config.alpha).map_err(|e| ConfigError(e.to_string()))?;
        Ok(Self {
            config,
            params,
            encoder,
            classifier,
            vocab,
            embeddings,
            masks,
        })
    }

    /// Rebuilds a model around stored parameter values. Every canonical name
    /// must be present with the expected shape, and nothing else.
    pub fn with_params(
        config: ModelConfig,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        stored: Vec<(String, Tensor)>,
    ) -> Result<Self, ConfigError> {
        let mut model = Self::new(config, vocab, embeddings, 0)?;
        if stored.len() != model.params.len() {
            return Err(ConfigError(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        for (name, tensor) in stored {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| ConfigError(format!("unknown parameter {name}")))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(ConfigError(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    tensor.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(model)
    }

    pub fn masks(&self) -> &MaskCache {
        &self.masks
    }

    /// Replaces the distance-mask weight, keeping every parameter.
    pub fn set_alpha(&mut self, alpha: f64) -> Result<(), ConfigError> {
        let config = ModelConfig { alpha, ..self.config.clone() };
        config.validate()?;
        self.masks = MaskCache::new(alpha).map_err(|e| ConfigError(e.to_string()))?;
        self.config = config;
        Ok(())
    }

    /// Trainable parameter count; the embedding table is excluded.
    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, batch: &SentenceBatch) -> Result<EncoderOutput> {
        self.encoder.encode(tape, p, &self.config, batch, &self.embeddings, &self.masks)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<NliForward> {
        let premise = self.encode(tape, p, &batch.premise)?;
        let hypothesis = self.encode(tape, p, &batch.hypothesis)?;
        let features = relation_features(tape, premise.vectors, hypothesis.vectors)?;
        let output = classify(tape, p, &self.classifier, &self.config, features)?;
        Ok(NliForward {
            premise,
            hypothesis,
            features,
            output,
        })
    }

    /// Eval-mode class probabilities, one row per example.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::eval();
        let p = self.params.bind(&mut tape, false)?;
        let fwd = self.forward(&mut tape, &p, batch)?;
        Ok(tape.value(fwd.output.probs).clone())
    }

    /// Eval-mode `4·d_e` sentence vectors, one row per sentence.
    pub fn encode_sentences<S: AsRef<[usize]>>(&self, sentences: &[S]) -> Result<Tensor> {
        let mut tape = Tape::eval();
        let p = self.params.bind(&mut tape, false)?;
        let out = self.encode(&mut tape, &p, &SentenceBatch::new(sentences))?;
        Ok(tape.value(out.vectors).clone())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
