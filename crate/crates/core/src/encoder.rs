//! The sentence encoder: a forward and a backward branch of masked
//! multi-head attention → fusion gate → position-wise FFN, concatenated and
//! pooled two ways into a `4·d_e` sentence vector.

use rand::Rng;

use crate::attention::{column_attention_pool, masked_multi_head, MultiDimParams, MultiHeadParams};
use crate::config::{ConfigError, ModelConfig};
use crate::data::{EmbeddingTable, SentenceBatch};
use crate::masks::{Direction, MaskCache};
use crate::params::{glorot, Bound, LayerNormParams, ParamId, ParamSet, Projection};
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionGateParams {
    pub embed: Projection,
    pub attend: Projection,
    pub bias: ParamId,
}

impl FusionGateParams {
    pub fn register<R: Rng>(set: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<Self, ConfigError> {
        let d = cfg.d_e;
        let place = cfg.projection_norm;
        Ok(Self {
            embed: Projection::register(set, rng, prefix, "WS", None, d, d, place, "ln_s")?,
            attend: Projection::register(set, rng, prefix, "WH", None, d, d, place, "ln_h")?,
            bias: set.register(format!("{prefix}.bF"), Tensor::zeros(&[d]))?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    pub out: Var,
    /// The gate `F`, same shape as the inputs.
    pub gate: Var,
}

/// `F ⊙ S·W^S + (1 − F) ⊙ H·W^H` with `F = sigmoid(S·W^S + H·W^H + b^F)`.
/// Dropout (when the tape trains) hits the pre-activation sum.
pub fn fusion_gate(
    tape: &mut Tape,
    p: &Bound,
    params: &FusionGateParams,
    cfg: &ModelConfig,
    s: Var,
    h: Var,
) -> Result<GateOutput> {
    if tape.value(s).shape() != tape.value(h).shape() {
        return Err(TensorError::Shape {
            op: "fusion_gate",
            lhs: tape.value(s).shape().to_vec(),
            rhs: tape.value(h).shape().to_vec(),
        });
    }
    let sf = params.embed.apply(tape, p, s, cfg.ln_eps)?;
    let hf = params.attend.apply(tape, p, h, cfg.ln_eps)?;
    let sum = tape.add(sf, hf)?;
    let pre = tape.add(sum, p[params.bias])?;
    let pre = tape.dropout(pre, cfg.dropout)?;
    let gate = tape.sigmoid(pre)?;
    let keep = tape.mul(gate, sf)?;
    let neg = tape.scale(gate, -1.0)?;
    let rest = tape.add_scalar(neg, 1.0)?;
    let other = tape.mul(rest, hf)?;
    let out = tape.add(keep, other)?;
    Ok(GateOutput { out, gate })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub norm: LayerNormParams,
}

impl FfnParams {
    pub fn register<R: Rng>(set: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            w1: set.register(format!("{prefix}.W1"), glorot(rng, cfg.d_e, cfg.d_ff))?,
            b1: set.register(format!("{prefix}.b1"), Tensor::zeros(&[cfg.d_ff]))?,
            w2: set.register(format!("{prefix}.W2"), glorot(rng, cfg.d_ff, cfg.d_e))?,
            b2: set.register(format!("{prefix}.b2"), Tensor::zeros(&[cfg.d_e]))?,
            norm: LayerNormParams::register(set, &format!("{prefix}.ln"), cfg.d_e)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FfnOutput {
    /// `LayerNorm(x + FFN(x))`.
    pub out: Var,
    /// Post-ReLU activations of the first layer.
    pub hidden: Var,
}

/// Position-wise feed-forward network with a residual connection and
/// post-normalization. Every row is processed independently.
pub fn position_ffn(tape: &mut Tape, p: &Bound, params: &FfnParams, cfg: &ModelConfig, x: Var) -> Result<FfnOutput> {
    let a = tape.matmul(x, p[params.w1])?;
    let a = tape.add(a, p[params.b1])?;
    let hidden = tape.relu(a)?;
    let y = tape.matmul(hidden, p[params.w2])?;
    let y = tape.add(y, p[params.b2])?;
    let res = tape.add(x, y)?;
    let out = params.norm.apply(tape, p, res, cfg.ln_eps)?;
    Ok(FfnOutput { out, hidden })
}

/// Per-column maximum over the real rows of `u`, with the winning row index
/// per column (lowest index on ties).
pub fn maxpool_real_positions(tape: &mut Tape, u: Var, pad_mask: &[bool]) -> Result<(Var, Vec<usize>)> {
    tape.max_rows_masked(u, pad_mask)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchParams {
    pub attention: MultiHeadParams,
    pub gate: FusionGateParams,
    pub ffn: FfnParams,
}

impl BranchParams {
    pub fn register<R: Rng>(set: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            attention: MultiHeadParams::register(set, rng, &format!("{prefix}.mha"), cfg)?,
            gate: FusionGateParams::register(set, rng, &format!("{prefix}.gate"), cfg)?,
            ffn: FfnParams::register(set, rng, &format!("{prefix}.ffn"), cfg)?,
        })
    }
}

/// Taps into one directional branch for a whole batch. Matrices other than
/// the attention weights are stacked `(B·n)×·` in batch order.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    /// `[sentence][head]`, each `n×n`.
    pub attention: Vec<Vec<Var>>,
    pub attention_out: Var,
    pub gate: Var,
    pub ffn_hidden: Var,
    pub out: Var,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `B×4d_e`: multi-dimensional pooling then max pooling.
    pub vectors: Var,
    /// `(B·n)×2d_e` concatenation of both branch outputs.
    pub u: Var,
    pub width: usize,
    pub forward: BranchTrace,
    pub backward: BranchTrace,
    /// Per sentence, the `n×2d_e` pooling attention weights.
    pub pool_weights: Vec<Var>,
    /// Per sentence, the max-pool winning row for each of the `2d_e` columns.
    pub maxpool_argmax: Vec<Vec<usize>>,
}

impl EncoderOutput {
    /// Extracts sentence `b` (its first `len` rows) from the stacked outputs.
    pub fn sentence(&self, tape: &Tape, b: usize, len: usize) -> EncodedSentence {
        let rows = |v: Var| {
            let t = tape.value(v);
            let d = t.cols();
            let start = b * self.width * d;
            Tensor::new(vec![len, d], t.data()[start..start + len * d].to_vec()).expect("sentence slice")
        };
        EncodedSentence {
            u_fw: rows(self.forward.out),
            u_bw: rows(self.backward.out),
            u: rows(self.u),
            sentence_vector: tape.value(self.vectors).row(b).to_vec(),
        }
    }

    pub fn branch(&self, direction: Direction) -> &BranchTrace {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }
}

/// One directional branch: masked multi-head attention, the fusion gate and
/// the position-wise FFN. `words` holds `B` stacked sentences of width `n`;
/// `offsets[b]` is the combined logit offset for sentence `b`.
pub fn encode_branch(
    tape: &mut Tape,
    p: &Bound,
    params: &BranchParams,
    cfg: &ModelConfig,
    words: Var,
    n: usize,
    offsets: &[Tensor],
) -> Result<BranchTrace> {
    let mha = masked_multi_head(tape, p, &params.attention, cfg.ln_eps, words, n, offsets)?;
    let attended = tape.dropout(mha.out, cfg.dropout)?;
    let gate = fusion_gate(tape, p, &params.gate, cfg, words, attended)?;
    let ffn = position_ffn(tape, p, &params.ffn, cfg, gate.out)?;
    Ok(BranchTrace {
        attention: mha.weights,
        attention_out: mha.out,
        gate: gate.gate,
        ffn_hidden: ffn.hidden,
        out: ffn.out,
    })
}

/// Plain-tensor view of one sentence's encoding, trimmed to its real length.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub u_fw: Tensor,
    pub u_bw: Tensor,
    pub u: Tensor,
    pub sentence_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub forward: BranchParams,
    pub backward: BranchParams,
    pub pool: MultiDimParams,
}

impl EncoderParams {
    pub fn register<R: Rng>(set: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            forward: BranchParams::register(set, rng, &format!("{prefix}.fw"), cfg)?,
            backward: BranchParams::register(set, rng, &format!("{prefix}.bw"), cfg)?,
            pool: MultiDimParams::register(set, rng, &format!("{prefix}.pool"), cfg)?,
        })
    }

    pub fn branch(&self, direction: Direction) -> &BranchParams {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// Encodes a padded batch. Dropout is live only on a training tape.
    pub fn encode(
        &self,
        tape: &mut Tape,
        p: &Bound,
        cfg: &ModelConfig,
        batch: &SentenceBatch,
        embeddings: &EmbeddingTable,
        masks: &MaskCache,
    ) -> Result<EncoderOutput> {
        let n = batch.width();
        if batch.is_empty() || n == 0 {
            return Err(TensorError::EmptyDimension { op: "encode" });
        }
        if embeddings.dim() != cfg.d_e {
            return Err(TensorError::Shape {
                op: "encode",
                lhs: vec![embeddings.vocab_size(), embeddings.dim()],
                rhs: vec![cfg.d_e],
            });
        }
        if masks.alpha() != cfg.alpha {
            return Err(TensorError::Contract(format!(
                "mask cache alpha {} differs from model alpha {}",
                masks.alpha(),
                cfg.alpha
            )));
        }
        let ids: Vec<usize> = batch.ids.iter().flatten().copied().collect();
        let words = tape.constant(embeddings.lookup(&ids))?;
        let set = masks.get(n)?;

        let branch_offsets = |direction: Direction| -> Result<Vec<Tensor>> {
            batch.pad_mask.iter().map(|m| set.combine(direction, m)).collect()
        };
        let forward = encode_branch(tape, p, &self.forward, cfg, words, n, &branch_offsets(Direction::Forward)?)?;
        let backward = encode_branch(tape, p, &self.backward, cfg, words, n, &branch_offsets(Direction::Backward)?)?;

        let u = tape.concat_cols(&[forward.out, backward.out])?;
        let logits = self.pool.logits(tape, p, u, cfg.ln_eps)?;
        let mut vectors = Vec::with_capacity(batch.len());
        let mut pool_weights = Vec::with_capacity(batch.len());
        let mut maxpool_argmax = Vec::with_capacity(batch.len());
        for (b, mask) in batch.pad_mask.iter().enumerate() {
            let ub = tape.slice_rows(u, b * n, n)?;
            let lb = tape.slice_rows(logits, b * n, n)?;
            let (pooled, weights) = column_attention_pool(tape, lb, ub, mask)?;
            let (maxed, argmax) = maxpool_real_positions(tape, ub, mask)?;
            vectors.push(tape.concat_cols(&[pooled, maxed])?);
            pool_weights.push(weights);
            maxpool_argmax.push(argmax);
        }
        let vectors = if vectors.len() == 1 {
            vectors[0]
        } else {
            tape.concat_rows(&vectors)?
        };
        Ok(EncoderOutput {
            vectors,
            u,
            width: n,
            forward,
            backward,
            pool_weights,
            maxpool_argmax,
        })
    }
}
