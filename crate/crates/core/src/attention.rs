//! Scaled dot-product attention, masked multi-head self-attention and
//! multi-dimensional source2token pooling attention.

use rand::Rng;

use crate::config::{ConfigError, ModelConfig};
use crate::params::{Bound, ParamId, ParamSet, Projection};
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError, MASK_THRESHOLD, NEG_INF};

/// `softmax(Q·Kᵀ/√d_k + offset)·V`, returning the output and the weights.
/// Rows of `offset` that mask every key produce zero weights and a zero
/// output row.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var, offset: &Tensor) -> Result<(Var, Var)> {
    let (n_q, d_k) = tape.value(q).dims2("scaled_dot_attention")?;
    let (n_k, d_k2) = tape.value(k).dims2("scaled_dot_attention")?;
    let (n_v, _) = tape.value(v).dims2("scaled_dot_attention")?;
    if d_k != d_k2 || n_k != n_v || offset.shape() != [n_q, n_k] {
        return Err(TensorError::Shape {
            op: "scaled_dot_attention",
            lhs: tape.value(q).shape().to_vec(),
            rhs: tape.value(k).shape().to_vec(),
        });
    }
    let scores = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let mask = tape.constant(offset.clone())?;
    let logits = tape.add(scaled, mask)?;
    let weights = tape.softmax_rows(logits, MASK_THRESHOLD)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Fused per-head projections: head `i` reads columns `i·d_k..(i+1)·d_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadParams {
    pub heads: usize,
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    /// Output projection `W^O`, no bias and no normalization.
    pub output: ParamId,
}

impl MultiHeadParams {
    pub fn register<R: Rng>(set: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<Self, ConfigError> {
        if cfg.heads == 0 || !cfg.d_e.is_multiple_of(cfg.heads) {
            return Err(ConfigError(format!("d_e ({}) is not divisible by heads ({})", cfg.d_e, cfg.heads)));
        }
        let d = cfg.d_e;
        let place = cfg.projection_norm;
        Ok(Self {
            heads: cfg.heads,
            query: Projection::register(set, rng, prefix, "WQ", None, d, d, place, "ln_q")?,
            key: Projection::register(set, rng, prefix, "WK", None, d, d, place, "ln_k")?,
            value: Projection::register(set, rng, prefix, "WV", None, d, d, place, "ln_v")?,
            output: set.register(format!("{prefix}.WO"), crate::params::glorot(rng, d, d))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadOutput {
    /// `(B·n)×d_e`, sentences stacked in batch order.
    pub out: Var,
    /// Attention weights per sentence, per head, each `n×n`.
    pub weights: Vec<Vec<Var>>,
}

/// Masked multi-head self-attention (`Q = K = V = x`) over `B` sentences of
/// padded length `n` stacked as the rows of `x`. `offsets[b]` is the combined
/// `n×n` logit offset for sentence `b`.
pub fn masked_multi_head(
    tape: &mut Tape,
    p: &Bound,
    params: &MultiHeadParams,
    eps: f64,
    x: Var,
    n: usize,
    offsets: &[Tensor],
) -> Result<MultiHeadOutput> {
    let (rows, d_e) = tape.value(x).dims2("masked_multi_head")?;
    if n == 0 || rows != n * offsets.len() {
        return Err(TensorError::Shape {
            op: "masked_multi_head",
            lhs: vec![rows, d_e],
            rhs: vec![offsets.len(), n],
        });
    }
    if d_e % params.heads != 0 {
        return Err(TensorError::Contract(format!(
            "configuration: d_e ({d_e}) is not divisible by heads ({})",
            params.heads
        )));
    }
    let d_k = d_e / params.heads;
    let q = params.query.apply(tape, p, x, eps)?;
    let k = params.key.apply(tape, p, x, eps)?;
    let v = params.value.apply(tape, p, x, eps)?;

    let mut per_sentence = Vec::with_capacity(offsets.len());
    let mut weights = Vec::with_capacity(offsets.len());
    for (b, offset) in offsets.iter().enumerate() {
        let (qs, ks, vs) = (
            tape.slice_rows(q, b * n, n)?,
            tape.slice_rows(k, b * n, n)?,
            tape.slice_rows(v, b * n, n)?,
        );
        let mut heads = Vec::with_capacity(params.heads);
        let mut head_weights = Vec::with_capacity(params.heads);
        for h in 0..params.heads {
            let qh = tape.slice_cols(qs, h * d_k, d_k)?;
            let kh = tape.slice_cols(ks, h * d_k, d_k)?;
            let vh = tape.slice_cols(vs, h * d_k, d_k)?;
            let (out, w) = scaled_dot_attention(tape, qh, kh, vh, offset)?;
            heads.push(out);
            head_weights.push(w);
        }
        per_sentence.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? });
        weights.push(head_weights);
    }
    let concat = if per_sentence.len() == 1 {
        per_sentence[0]
    } else {
        tape.concat_rows(&per_sentence)?
    };
    let out = tape.matmul(concat, p[params.output])?;
    Ok(MultiHeadOutput { out, weights })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiDimParams {
    pub first: Projection,
    pub second: Projection,
}

impl MultiDimParams {
    pub fn register<R: Rng>(set: &mut ParamSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<Self, ConfigError> {
        let d = 2 * cfg.d_e;
        let place = cfg.projection_norm;
        Ok(Self {
            first: Projection::register(set, rng, prefix, "W1", Some("b1"), d, d, place, "ln_1")?,
            second: Projection::register(set, rng, prefix, "W2", Some("b2"), d, d, place, "ln_2")?,
        })
    }

    /// Per-token, per-feature logits `ELU(u·W1 + b1)·W2 + b2` for every row.
    pub fn logits(&self, tape: &mut Tape, p: &Bound, u: Var, eps: f64) -> Result<Var> {
        let h = self.first.apply(tape, p, u, eps)?;
        let h = tape.elu(h)?;
        self.second.apply(tape, p, h, eps)
    }
}

/// Softmax of each column of `logits` over the real rows, then the
/// weighted column sums of `u`. Returns the `1×d` pooled row and the `n×d`
/// weights.
pub fn column_attention_pool(tape: &mut Tape, logits: Var, u: Var, pad_mask: &[bool]) -> Result<(Var, Var)> {
    let (n, d) = tape.value(logits).dims2("column_attention_pool")?;
    if pad_mask.len() != n || tape.value(u).shape() != [n, d] {
        return Err(TensorError::Shape {
            op: "column_attention_pool",
            lhs: vec![n, d],
            rhs: vec![pad_mask.len()],
        });
    }
    if !pad_mask.iter().any(|&m| m) {
        return Err(TensorError::Contract("pooling over zero real positions".into()));
    }
    let offset: Vec<f64> = pad_mask
        .iter()
        .flat_map(|&real| std::iter::repeat_n(if real { 0.0 } else { NEG_INF }, d))
        .collect();
    let offset = tape.constant(Tensor::new(vec![n, d], offset)?)?;
    let masked = tape.add(logits, offset)?;
    let by_column = tape.transpose(masked)?;
    let soft = tape.softmax_rows(by_column, MASK_THRESHOLD)?;
    let weights = tape.transpose(soft)?;
    let weighted = tape.mul(weights, u)?;
    let pooled = tape.sum_rows(weighted)?;
    Ok((pooled, weights))
}

/// Multi-dimensional source2token attention over one sentence `u` (`n×2d_e`).
pub fn multi_dim_source2token(
    tape: &mut Tape,
    p: &Bound,
    params: &MultiDimParams,
    eps: f64,
    u: Var,
    pad_mask: &[bool],
) -> Result<(Var, Var)> {
    let logits = params.logits(tape, p, u, eps)?;
    column_attention_pool(tape, logits, u, pad_mask)
}
