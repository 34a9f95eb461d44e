use crate::data::{tokenize, DataError, SentenceBatch};
use crate::masks::Direction;
use crate::nli::DsanModel;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::IntrospectError;

/// Measurements for one directional branch; every per-word vector has one
/// entry per token.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionReport {
    /// One `n×n` softmax weight matrix per head.
    pub attn_per_head: Vec<Tensor>,
    /// Element-wise mean of `attn_per_head`.
    pub attn_avg: Tensor,
    /// Mean of the gate `F` over its `d_e` dimensions.
    pub gate_avg: Vec<f64>,
    /// Fraction of FFN first-layer units that are exactly zero after ReLU.
    pub ffn_deact_ratio: Vec<f64>,
    /// Largest entry of `LayerNorm(x + FFN(x))`.
    pub ffn_out_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyReport {
    pub tokens: Vec<String>,
    pub forward: DirectionReport,
    pub backward: DirectionReport,
    /// Mean pooling-attention weight per word over the `2d_e` features.
    pub multidim_avg_weight: Vec<f64>,
    /// Percentage of the `2d_e` max-pool selections won by each word.
    pub maxpool_ratio: Vec<f64>,
}

impl CaseStudyReport {
    pub fn direction(&self, d: Direction) -> &DirectionReport {
        match d {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the structural properties every report must satisfy and
    /// returns a description of each violation.
    pub fn violations(&self) -> Vec<String> {
        let n = self.len();
        let mut out = Vec::new();
        for d in Direction::BOTH {
            let r = self.direction(d);
            let name = d.as_str();
            for (h, w) in r.attn_per_head.iter().chain([&r.attn_avg]).enumerate() {
                if w.shape() != [n, n] {
                    out.push(format!("{name} head {h}: shape {:?}", w.shape()));
                    continue;
                }
                for i in 0..n {
                    let row = w.row(i);
                    let s: f64 = row.iter().sum();
                    // a query with no admissible key sums to 0; all others to 1
                    let has_key = match d {
                        Direction::Forward => i > 0,
                        Direction::Backward => i + 1 < n,
                    };
                    let want = if has_key { 1.0 } else { 0.0 };
                    if (s - want).abs() > 1e-9 || row.iter().any(|v| *v < 0.0) {
                        out.push(format!("{name} head {h} row {i} sums to {s}"));
                    }
                    for (j, v) in row.iter().enumerate() {
                        let admissible = match d {
                            Direction::Forward => j < i,
                            Direction::Backward => j > i,
                        };
                        if !admissible && *v != 0.0 {
                            out.push(format!("{name} head {h} ({i},{j}) masked entry is {v}"));
                        }
                    }
                }
            }
            if r.gate_avg.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
                out.push(format!("{name} gate average outside (0,1)"));
            }
            if r.ffn_deact_ratio.iter().any(|x| !(0.0..=1.0).contains(x)) {
                out.push(format!("{name} deactivation ratio outside [0,1]"));
            }
            for (label, v) in [("gate", &r.gate_avg), ("deact", &r.ffn_deact_ratio), ("ffn max", &r.ffn_out_max)] {
                if v.len() != n {
                    out.push(format!("{name} {label}: {} entries", v.len()));
                }
            }
        }
        let total: f64 = self.maxpool_ratio.iter().sum();
        if (total - 100.0).abs() > 1e-9 {
            out.push(format!("max-pool ratios sum to {total}"));
        }
        if self.multidim_avg_weight.len() != n || self.maxpool_ratio.len() != n {
            out.push("pooling vectors have the wrong length".into());
        }
        out
    }
}

/// Tokenizes `sentence` and runs [`capture_tokens`].
pub fn capture(model: &DsanModel, sentence: &str) -> Result<CaseStudyReport, IntrospectError> {
    let tokens = tokenize(sentence)?;
    capture_tokens(model, &tokens)
}

/// One eval-mode pass over a single sentence with every tap recorded.
pub fn capture_tokens<S: AsRef<str>>(model: &DsanModel, tokens: &[S]) -> Result<CaseStudyReport, IntrospectError> {
    if tokens.is_empty() {
        return Err(DataError::EmptySentence.into());
    }
    let ids = model.vocab.encode(tokens);
    let n = ids.len();
    let mut tape = Tape::eval();
    let p = model.params.bind(&mut tape, false)?;
    let out = model.encode(&mut tape, &p, &SentenceBatch::new(&[ids]))?;

    let direction = |d: Direction| {
        let trace = out.branch(d);
        let heads: Vec<Tensor> = trace.attention[0].iter().map(|v| tape.value(*v).clone()).collect();
        let mut sum = vec![0.0; n * n];
        for h in &heads {
            for (s, v) in sum.iter_mut().zip(h.data()) {
                *s += v;
            }
        }
        let k = heads.len() as f64;
        let attn_avg = Tensor::new(vec![n, n], sum.into_iter().map(|s| s / k).collect()).expect("n×n");
        let gate = tape.value(trace.gate);
        let hidden = tape.value(trace.ffn_hidden);
        let ffn = tape.value(trace.out);
        DirectionReport {
            attn_per_head: heads,
            attn_avg,
            gate_avg: (0..n).map(|i| mean(gate.row(i))).collect(),
            ffn_deact_ratio: (0..n)
                .map(|i| {
                    let row = hidden.row(i);
                    row.iter().filter(|v| **v == 0.0).count() as f64 / row.len() as f64
                })
                .collect(),
            ffn_out_max: (0..n).map(|i| ffn.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect(),
        }
    };
    let forward = direction(Direction::Forward);
    let backward = direction(Direction::Backward);

    let pool = tape.value(out.pool_weights[0]);
    let argmax = &out.maxpool_argmax[0];
    let mut wins = vec![0usize; n];
    for &row in argmax {
        wins[row] += 1;
    }
    Ok(CaseStudyReport {
        tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        forward,
        backward,
        multidim_avg_weight: (0..n).map(|i| mean(pool.row(i))).collect(),
        maxpool_ratio: wins.iter().map(|&w| 100.0 * w as f64 / argmax.len() as f64).collect(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
