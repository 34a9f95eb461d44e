//! Random-instance comparisons between the crate's layers and the scalar
//! oracles. Each runner returns the largest absolute deviation seen.

use dsan::attention::{masked_multi_head, multi_dim_source2token, MultiDimParams, MultiHeadParams};
use dsan::encoder::{fusion_gate, position_ffn, FfnParams, FusionGateParams};
use dsan::masks::{Direction, MaskSet};
use dsan::params::ParamSet;
use dsan::{ModelConfig, Tape};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracle::{self, mat, Mat, Proj};
use super::{param, randomize, random_tensor, rng};

fn random_cfg(r: &mut ChaCha8Rng) -> ModelConfig {
    let heads = r.gen_range(1..=3);
    let dk = r.gen_range(1..=3).max(if heads == 1 { 2 } else { 1 });
    let d = heads * dk;
    ModelConfig {
        d_e: d,
        heads,
        d_ff: 4 * d,
        d_h: 4,
        alpha: [0.0, 1.5, r.gen_range(0.1..3.0)][r.gen_range(0..3)],
        ..ModelConfig::default()
    }
}

fn random_mask(r: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let len = r.gen_range(1..=n);
    (0..n).map(|j| j < len).collect()
}

fn proj<'a>(set: &'a ParamSet, owned: &'a [Mat], w: usize, b: Option<&'a [f64]>, ln: &str) -> Proj<'a> {
    Proj {
        w: &owned[w],
        b,
        gain: param(set, &format!("{ln}.gain")).data(),
        bias: param(set, &format!("{ln}.bias")).data(),
    }
}

/// Masked multi-head attention over stacked, padded sentences, with the
/// oracle building its own offsets from the direction, α and padding.
#[allow(clippy::needless_range_loop)]
pub fn attention(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let cfg = random_cfg(&mut r);
        let mut set = ParamSet::new();
        let mp = MultiHeadParams::register(&mut set, &mut r, "m", &cfg).unwrap();
        randomize(&mut set, &mut r, 0.8);
        let n = r.gen_range(1..=6);
        let batch = r.gen_range(1..=3);
        let dir = Direction::BOTH[r.gen_range(0..2)];
        let masks: Vec<Vec<bool>> = (0..batch).map(|_| random_mask(&mut r, n)).collect();
        let x = random_tensor(&mut r, &[batch * n, cfg.d_e], 1.5);

        let mset = MaskSet::new(n, cfg.alpha).unwrap();
        let offsets: Vec<_> = masks.iter().map(|m| mset.combine(dir, m).unwrap()).collect();
        let mut t = Tape::eval();
        let p = set.bind(&mut t, false).unwrap();
        let xv = t.constant(x.clone()).unwrap();
        let got = masked_multi_head(&mut t, &p, &mp, cfg.ln_eps, xv, n, &offsets).unwrap();

        let ws: Vec<Mat> = ["m.WQ", "m.WK", "m.WV", "m.WO"].iter().map(|w| mat(param(&set, w))).collect();
        let xm = mat(&x);
        for (b, m) in masks.iter().enumerate() {
            let rows: Mat = xm[b * n..(b + 1) * n].to_vec();
            let offset: Mat = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let open = match dir {
                                Direction::Forward => j < i,
                                Direction::Backward => j > i,
                            };
                            if open && m[j] {
                                -cfg.alpha * (i as f64 - j as f64).abs()
                            } else {
                                -1e9
                            }
                        })
                        .collect()
                })
                .collect();
            let (out, weights) = oracle::multi_head(
                &rows,
                &proj(&set, &ws, 0, None, "m.ln_q"),
                &proj(&set, &ws, 1, None, "m.ln_k"),
                &proj(&set, &ws, 2, None, "m.ln_v"),
                &ws[3],
                cfg.heads,
                &offset,
                cfg.ln_eps,
            );
            let got_out = t.value(got.out);
            for i in 0..n {
                for c in 0..cfg.d_e {
                    worst = worst.max((out[i][c] - got_out.get(b * n + i, c)).abs());
                }
            }
            for (h, w) in weights.iter().enumerate() {
                worst = worst.max(oracle::max_diff(w, t.value(got.weights[b][h])));
            }
        }
    }
    worst
}

pub fn gate(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..random_cfg(&mut r)
        };
        let mut set = ParamSet::new();
        let gp = FusionGateParams::register(&mut set, &mut r, "g", &cfg).unwrap();
        randomize(&mut set, &mut r, 1.0);
        let n = r.gen_range(1..=6);
        let s = random_tensor(&mut r, &[n, cfg.d_e], 2.0);
        let h = random_tensor(&mut r, &[n, cfg.d_e], 2.0);
        let mut t = Tape::eval();
        let p = set.bind(&mut t, false).unwrap();
        let (sv, hv) = (t.constant(s.clone()).unwrap(), t.constant(h.clone()).unwrap());
        let got = fusion_gate(&mut t, &p, &gp, &cfg, sv, hv).unwrap();

        let ws = vec![mat(param(&set, "g.WS")), mat(param(&set, "g.WH"))];
        let (out, g) = oracle::fusion_gate(
            &mat(&s),
            &mat(&h),
            &proj(&set, &ws, 0, None, "g.ln_s"),
            &proj(&set, &ws, 1, None, "g.ln_h"),
            param(&set, "g.bF").data(),
            cfg.ln_eps,
        );
        worst = worst.max(oracle::max_diff(&out, t.value(got.out)));
        worst = worst.max(oracle::max_diff(&g, t.value(got.gate)));
    }
    worst
}

pub fn ffn(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let cfg = random_cfg(&mut r);
        let mut set = ParamSet::new();
        let fp = FfnParams::register(&mut set, &mut r, "f", &cfg).unwrap();
        randomize(&mut set, &mut r, 1.0);
        let n = r.gen_range(1..=6);
        let x = random_tensor(&mut r, &[n, cfg.d_e], 2.0);
        let mut t = Tape::eval();
        let p = set.bind(&mut t, false).unwrap();
        let xv = t.constant(x.clone()).unwrap();
        let got = position_ffn(&mut t, &p, &fp, &cfg, xv).unwrap();
        let (out, hidden) = oracle::ffn(
            &mat(&x),
            &mat(param(&set, "f.W1")),
            param(&set, "f.b1").data(),
            &mat(param(&set, "f.W2")),
            param(&set, "f.b2").data(),
            param(&set, "f.ln.gain").data(),
            param(&set, "f.ln.bias").data(),
            cfg.ln_eps,
        );
        worst = worst.max(oracle::max_diff(&out, t.value(got.out)));
        worst = worst.max(oracle::max_diff(&hidden, t.value(got.hidden)));
    }
    worst
}

pub fn pooling(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let cfg = random_cfg(&mut r);
        let mut set = ParamSet::new();
        let pp = MultiDimParams::register(&mut set, &mut r, "p", &cfg).unwrap();
        randomize(&mut set, &mut r, 1.0);
        let n = r.gen_range(1..=6);
        let mask = random_mask(&mut r, n);
        let u = random_tensor(&mut r, &[n, 2 * cfg.d_e], 2.0);
        let mut t = Tape::eval();
        let p = set.bind(&mut t, false).unwrap();
        let uv = t.constant(u.clone()).unwrap();
        let (pooled, weights) = multi_dim_source2token(&mut t, &p, &pp, cfg.ln_eps, uv, &mask).unwrap();

        let ws = vec![mat(param(&set, "p.W1")), mat(param(&set, "p.W2"))];
        let (want, want_w) = oracle::multi_dim_pool(
            &mat(&u),
            &proj(&set, &ws, 0, Some(param(&set, "p.b1").data()), "p.ln_1"),
            &proj(&set, &ws, 1, Some(param(&set, "p.b2").data()), "p.ln_2"),
            &mask,
            cfg.ln_eps,
        );
        worst = worst.max(oracle::max_diff(&vec![want], t.value(pooled)));
        worst = worst.max(oracle::max_diff(&want_w, t.value(weights)));
    }
    worst
}
