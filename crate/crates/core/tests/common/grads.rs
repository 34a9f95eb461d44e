//! Finite-difference checks of individual layers and of the whole model.

use dsan::attention::{masked_multi_head, multi_dim_source2token, MultiDimParams, MultiHeadParams};
use dsan::data::{Batch, Label, NliExample, SentenceBatch};
use dsan::encoder::{fusion_gate, maxpool_real_positions, position_ffn, FfnParams, FusionGateParams};
use dsan::gradcheck::{grad_check, GradCheckReport};
use dsan::masks::{Direction, MaskSet};
use dsan::nli::{classify, nli_loss, ClassifierParams};
use dsan::params::{Bound, ParamSet};
use dsan::tensor::{Result, MASK_THRESHOLD, NEG_INF};
use dsan::{ModelConfig, Tape, Tensor, Var};

use super::{randomize, random_tensor, rng, toy_model};

pub const H: f64 = 1e-5;

/// `Σ out ⊙ C` for a fixed pseudo-random `C`, so that no output direction
/// is privileged.
pub fn weighted_sum(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = t.value(v).shape().to_vec();
    let c = random_tensor(&mut rng(seed), &shape, 1.0);
    let c = t.constant(c)?;
    let prod = t.mul(v, c)?;
    t.sum_all(prod)
}

fn with_set<F>(set: &ParamSet, extra: Vec<Tensor>, mut body: F) -> GradCheckReport
where
    F: FnMut(&mut Tape, &Bound, &[Var]) -> Result<Var>,
{
    let k = set.len();
    let mut all: Vec<Tensor> = set.tensors().to_vec();
    all.extend(extra);
    grad_check(
        |t, v| {
            let bound = Bound::from_vars(v[..k].to_vec());
            body(t, &bound, &v[k..])
        },
        &mut all,
        H,
    )
    .expect("gradient check runs")
}

fn toy_small() -> ModelConfig {
    ModelConfig {
        d_e: 6,
        heads: 2,
        d_ff: 24,
        d_h: 5,
        ..ModelConfig::toy()
    }
}

/// Per-layer maximum relative errors, each labelled.
pub fn layer_reports() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(77);

    let mut ps = vec![random_tensor(&mut r, &[3, 4], 1.0), random_tensor(&mut r, &[4, 2], 1.0)];
    let rep = grad_check(
        |t, v| {
            let m = t.matmul(v[0], v[1])?;
            let mt = t.matmul_nt(m, m)?;
            weighted_sum(t, mt, 1)
        },
        &mut ps,
        H,
    )
    .unwrap();
    out.push(("matmul", rep.max_rel_error));

    let mut ps = vec![
        random_tensor(&mut r, &[3, 5], 2.0),
        random_tensor(&mut r, &[5], 1.0),
        random_tensor(&mut r, &[5], 1.0),
    ];
    let rep = grad_check(
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?;
            weighted_sum(t, y, 2)
        },
        &mut ps,
        H,
    )
    .unwrap();
    out.push(("layer_norm", rep.max_rel_error));

    let mask = Tensor::from_rows(&[[0.0, NEG_INF, 0.0, -1.5], [NEG_INF; 4], [0.0, 0.0, -3.0, NEG_INF]]).unwrap();
    let mut ps = vec![random_tensor(&mut r, &[3, 4], 2.0)];
    let rep = grad_check(
        |t, v| {
            let m = t.constant(mask.clone())?;
            let x = t.add(v[0], m)?;
            let s = t.softmax_rows(x, MASK_THRESHOLD)?;
            weighted_sum(t, s, 3)
        },
        &mut ps,
        H,
    )
    .unwrap();
    out.push(("masked softmax", rep.max_rel_error));

    let mut ps = vec![random_tensor(&mut r, &[4, 3], 2.0)];
    let rep = grad_check(
        |t, v| {
            let a = t.elu(v[0])?;
            let b = t.sigmoid(v[0])?;
            let c = t.tanh(v[0])?;
            let d = t.relu(v[0])?;
            let e = t.abs(v[0])?;
            let cat = t.concat_cols(&[a, b, c, d, e])?;
            let tr = t.transpose(cat)?;
            let sl = t.slice_rows(tr, 2, 7)?;
            let sc = t.slice_cols(sl, 1, 3)?;
            let stacked = t.concat_rows(&[sc, sc])?;
            let s = t.sum_rows(stacked)?;
            weighted_sum(t, s, 4)
        },
        &mut ps,
        H,
    )
    .unwrap();
    out.push(("elementwise and reshaping", rep.max_rel_error));

    let mut ps = vec![random_tensor(&mut r, &[4, 3], 2.0)];
    let rep = grad_check(
        |t, v| {
            let (m, _) = t.max_rows_masked(v[0], &[true, true, false, true])?;
            weighted_sum(t, m, 5)
        },
        &mut ps,
        H,
    )
    .unwrap();
    out.push(("masked max pool", rep.max_rel_error));

    let cfg = toy_small();
    let mut set = ParamSet::new();
    let mp = MultiHeadParams::register(&mut set, &mut r, "m", &cfg).unwrap();
    randomize(&mut set, &mut r, 0.8);
    let n = 4;
    let mset = MaskSet::new(n, cfg.alpha).unwrap();
    let offsets = vec![
        mset.combine(Direction::Forward, &[true; 4]).unwrap(),
        mset.combine(Direction::Backward, &[true, true, true, false]).unwrap(),
    ];
    let x = random_tensor(&mut r, &[2 * n, cfg.d_e], 1.0);
    let rep = with_set(&set, vec![x], |t, p, v| {
        let o = masked_multi_head(t, p, &mp, cfg.ln_eps, v[0], n, &offsets)?;
        weighted_sum(t, o.out, 6)
    });
    out.push(("masked multi-head attention", rep.max_rel_error));

    let mut set = ParamSet::new();
    let gp = FusionGateParams::register(&mut set, &mut r, "g", &cfg).unwrap();
    randomize(&mut set, &mut r, 0.8);
    let s = random_tensor(&mut r, &[3, cfg.d_e], 1.0);
    let h = random_tensor(&mut r, &[3, cfg.d_e], 1.0);
    let rep = with_set(&set, vec![s, h], |t, p, v| {
        let g = fusion_gate(t, p, &gp, &cfg, v[0], v[1])?;
        weighted_sum(t, g.out, 7)
    });
    out.push(("fusion gate", rep.max_rel_error));

    let mut set = ParamSet::new();
    let fp = FfnParams::register(&mut set, &mut r, "f", &cfg).unwrap();
    randomize(&mut set, &mut r, 0.8);
    let x = random_tensor(&mut r, &[3, cfg.d_e], 1.0);
    let rep = with_set(&set, vec![x], |t, p, v| {
        let f = position_ffn(t, p, &fp, &cfg, v[0])?;
        weighted_sum(t, f.out, 8)
    });
    out.push(("position-wise FFN", rep.max_rel_error));

    let mut set = ParamSet::new();
    let pp = MultiDimParams::register(&mut set, &mut r, "p", &cfg).unwrap();
    randomize(&mut set, &mut r, 0.8);
    let u = random_tensor(&mut r, &[4, 2 * cfg.d_e], 1.0);
    let rep = with_set(&set, vec![u], |t, p, v| {
        let (pooled, _) = multi_dim_source2token(t, p, &pp, cfg.ln_eps, v[0], &[true, true, true, false])?;
        let (maxed, _) = maxpool_real_positions(t, v[0], &[true, true, true, false])?;
        let both = t.concat_cols(&[pooled, maxed])?;
        weighted_sum(t, both, 9)
    });
    out.push(("multi-dim and max pooling", rep.max_rel_error));

    let mut set = ParamSet::new();
    let cp = ClassifierParams::register(&mut set, &mut r, "cls", &cfg).unwrap();
    randomize(&mut set, &mut r, 0.5);
    let f = random_tensor(&mut r, &[2, 16 * cfg.d_e], 1.0);
    let rep = with_set(&set, vec![f], |t, p, v| {
        let o = classify(t, p, &cp, &cfg, v[0])?;
        Ok(nli_loss(t, o.probs, &[Label::Neutral, Label::Entailment])?.0)
    });
    out.push(("classifier and loss", rep.max_rel_error));
    out
}

/// Two padded sentences of lengths 5 and 3.
pub fn toy_sentences() -> Vec<Vec<usize>> {
    vec![vec![2, 3, 4, 5, 6], vec![7, 8, 2]]
}

/// Loss = sum of the sentence vectors, w.r.t. every encoder parameter.
pub fn encoder_report() -> GradCheckReport {
    let model = toy_model(&["a", "b", "c", "d", "e", "f", "g"], 21);
    let batch = SentenceBatch::new(&toy_sentences());
    let mut ps = model.params.tensors().to_vec();
    grad_check(
        |t, v| {
            let p = Bound::from_vars(v.to_vec());
            let out = model.encode(t, &p, &batch)?;
            t.sum_all(out.vectors)
        },
        &mut ps,
        H,
    )
    .unwrap()
}

/// Full NLI loss on a 2-example batch (toy dims, n ≤ 5), w.r.t. every
/// trainable parameter.
pub fn full_model_report() -> GradCheckReport {
    let model = toy_model(&["a", "b", "c", "d", "e", "f", "g"], 22);
    let examples = vec![
        NliExample {
            premise: vec![2, 3, 4, 5, 6],
            hypothesis: vec![3, 8],
            label: Label::Contradiction,
        },
        NliExample {
            premise: vec![7, 2, 4],
            hypothesis: vec![5, 6, 8, 2],
            label: Label::Neutral,
        },
    ];
    let batch = Batch::from_examples(&examples, &[0, 1]);
    let mut ps = model.params.tensors().to_vec();
    grad_check(
        |t, v| {
            let p = Bound::from_vars(v.to_vec());
            let fwd = model.forward(t, &p, &batch)?;
            Ok(nli_loss(t, fwd.output.probs, &batch.labels)?.0)
        },
        &mut ps,
        H,
    )
    .unwrap()
}
