//! Deterministic property sweeps shared with the acceptance suite.

use dsan::attention::scaled_dot_attention;
use dsan::data::SentenceBatch;
use dsan::masks::{build_directional, build_distance, Direction, MaskSet};
use dsan::tensor::MASK_THRESHOLD;
use dsan::{DsanModel, Tape, Tensor};

/// Checks every mask property for `n` in `1..=max_n`; returns the list of
/// failures (empty when all hold).
pub fn mask_sweep(max_n: usize) -> Vec<String> {
    let mut bad = Vec::new();
    for n in 1..=max_n {
        for dir in Direction::BOTH {
            let m = build_directional(n, dir).unwrap();
            let open = m.data().iter().filter(|v| **v == 0.0).count();
            if open != n * (n - 1) / 2 {
                bad.push(format!("n={n} {}: {open} unmasked", dir.as_str()));
            }
            if (0..n).any(|i| m.get(i, i) > MASK_THRESHOLD) {
                bad.push(format!("n={n} {}: diagonal open", dir.as_str()));
            }
        }
        let d = build_distance(n).unwrap();
        for i in 0..n {
            for j in 0..n {
                if d.get(i, j) != -((i as f64) - (j as f64)).abs() || d.get(i, j) != d.get(j, i) {
                    bad.push(format!("n={n}: distance ({i},{j}) = {}", d.get(i, j)));
                }
            }
        }
        // uniform content logits: Q = 0 makes every score zero
        for alpha in [0.5, 1.5, 3.0] {
            let set = MaskSet::new(n, alpha).unwrap();
            for dir in Direction::BOTH {
                let w = uniform_content_weights(&set.combine(dir, &vec![true; n]).unwrap());
                for i in 0..n {
                    let mut keys: Vec<usize> = (0..n)
                        .filter(|&j| match dir {
                            Direction::Forward => j < i,
                            Direction::Backward => j > i,
                        })
                        .collect();
                    keys.sort_by_key(|&j| (i as isize - j as isize).unsigned_abs());
                    for pair in keys.windows(2) {
                        if w.get(i, pair[1]) >= w.get(i, pair[0]) {
                            bad.push(format!(
                                "n={n} α={alpha} {} row {i}: weight not decreasing in distance",
                                dir.as_str()
                            ));
                        }
                    }
                }
            }
        }
        bad.extend(padding_sweep(n));
    }
    bad
}

fn uniform_content_weights(offset: &Tensor) -> Tensor {
    let n = offset.rows();
    let mut t = Tape::eval();
    let q = t.constant(Tensor::zeros(&[n, 2])).unwrap();
    let v = t.constant(Tensor::full(&[n, 2], 1.0)).unwrap();
    let (_, w) = scaled_dot_attention(&mut t, q, q, v, offset).unwrap();
    t.value(w).clone()
}

/// For every real length `len ≤ n`, attention over a padded sequence must
/// give the real rows exactly the weights and outputs of the unpadded one.
fn padding_sweep(n: usize) -> Vec<String> {
    let mut bad = Vec::new();
    let alpha = 1.5;
    let padded = MaskSet::new(n, alpha).unwrap();
    let d = 3;
    let x: Vec<f64> = (0..n * d).map(|k| ((k * 7 + 3) as f64).sin()).collect();
    for len in 1..=n {
        let exact = MaskSet::new(len, alpha).unwrap();
        let mask: Vec<bool> = (0..n).map(|j| j < len).collect();
        for dir in Direction::BOTH {
            let run = |offset: &Tensor, rows: usize| {
                let mut t = Tape::eval();
                let xs = t.constant(Tensor::new(vec![rows, d], x[..rows * d].to_vec()).unwrap()).unwrap();
                let (o, w) = scaled_dot_attention(&mut t, xs, xs, xs, offset).unwrap();
                (t.value(o).clone(), t.value(w).clone())
            };
            let (po, pw) = run(&padded.combine(dir, &mask).unwrap(), n);
            let (eo, ew) = run(&exact.combine(dir, &vec![true; len]).unwrap(), len);
            for i in 0..len {
                if po.row(i) != eo.row(i) || &pw.row(i)[..len] != ew.row(i) || pw.row(i)[len..].iter().any(|v| *v != 0.0) {
                    bad.push(format!("n={n} len={len} {}: padding visible in row {i}", dir.as_str()));
                }
            }
        }
    }
    bad
}

/// Encodes `ids` alone and inside a batch padded to a longer width; true
/// when the sentence vectors are bit-identical.
pub fn length_extension_invariant(model: &DsanModel, ids: &[usize], longer: &[usize]) -> bool {
    let alone = model.encode_sentences(&[ids]).unwrap();
    let batched = model.encode_sentences(&[longer, ids]).unwrap();
    alone.row(0) == batched.row(1)
}

/// Encodes one sentence padded to `width` and returns the vector.
pub fn encode_padded(model: &DsanModel, ids: &[usize], width: usize) -> Vec<f64> {
    let mut t = Tape::eval();
    let p = model.params.bind(&mut t, false).unwrap();
    let out = model.encode(&mut t, &p, &SentenceBatch::with_width(&[ids], width)).unwrap();
    t.value(out.vectors).row(0).to_vec()
}
