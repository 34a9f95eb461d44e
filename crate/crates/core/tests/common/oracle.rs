//! Scalar-loop reference implementations on `Vec<Vec<f64>>`, written without
//! any of the crate's tensor or tape code.

use dsan::Tensor;

pub type Mat = Vec<Vec<f64>>;

const MASKED: f64 = -1e8;

pub fn mat(t: &Tensor) -> Mat {
    t.to_rows()
}

pub fn vec1(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn max_diff(a: &Mat, b: &Tensor) -> f64 {
    assert_eq!(a.len() * a[0].len(), b.len(), "oracle size mismatch");
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(i, j)).abs());
        }
    }
    worst
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn add_row(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

pub fn zip_with(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| f(*x, *y)).collect())
        .collect()
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|x| f(*x)).collect()).collect()
}

pub fn layer_norm(a: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    a.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
            let sd = (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, x)| gain[j] * ((x - mean) / sd) + bias[j])
                .collect()
        })
        .collect()
}

/// Softmax over the entries above the masking threshold; masked entries
/// (and whole rows with nothing admissible) are zero.
pub fn masked_softmax(logits: &[f64]) -> Vec<f64> {
    let open: Vec<usize> = (0..logits.len()).filter(|&j| logits[j] > MASKED).collect();
    let mut out = vec![0.0; logits.len()];
    if open.is_empty() {
        return out;
    }
    let max = open.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &j in &open {
        out[j] = (logits[j] - max).exp();
        z += out[j];
    }
    for &j in &open {
        out[j] /= z;
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// `LN(x·W + b)`.
pub struct Proj<'a> {
    pub w: &'a Mat,
    pub b: Option<&'a [f64]>,
    pub gain: &'a [f64],
    pub bias: &'a [f64],
}

impl Proj<'_> {
    pub fn apply(&self, x: &Mat, eps: f64) -> Mat {
        let mut y = matmul(x, self.w);
        if let Some(b) = self.b {
            y = add_row(&y, b);
        }
        layer_norm(&y, self.gain, self.bias, eps)
    }
}

/// Masked multi-head self-attention for one sentence: per-head scaled dot
/// products with an additive offset, heads concatenated, then `W^O`.
/// Returns the output and the per-head weights.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(x: &Mat, q: &Proj, k: &Proj, v: &Proj, wo: &Mat, heads: usize, offset: &Mat, eps: f64) -> (Mat, Vec<Mat>) {
    let n = x.len();
    let (qa, ka, va) = (q.apply(x, eps), k.apply(x, eps), v.apply(x, eps));
    let d = qa[0].len();
    let dk = d / heads;
    let mut concat = vec![vec![0.0; d]; n];
    let mut all = Vec::new();
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        let mut weights = vec![vec![0.0; n]; n];
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    let dot: f64 = cols.clone().map(|c| qa[i][c] * ka[j][c]).sum();
                    dot / (dk as f64).sqrt() + offset[i][j]
                })
                .collect();
            weights[i] = masked_softmax(&logits);
            for c in cols.clone() {
                concat[i][c] = (0..n).map(|j| weights[i][j] * va[j][c]).sum();
            }
        }
        all.push(weights);
    }
    (matmul(&concat, wo), all)
}

/// Returns `(out, gate)`.
pub fn fusion_gate(s: &Mat, h: &Mat, ws: &Proj, wh: &Proj, bf: &[f64], eps: f64) -> (Mat, Mat) {
    let sf = ws.apply(s, eps);
    let hf = wh.apply(h, eps);
    let n = s.len();
    let d = sf[0].len();
    let mut out = vec![vec![0.0; d]; n];
    let mut gate = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..d {
            let f = sigmoid(sf[i][j] + hf[i][j] + bf[j]);
            gate[i][j] = f;
            out[i][j] = f * sf[i][j] + (1.0 - f) * hf[i][j];
        }
    }
    (out, gate)
}

/// `LN(x + relu(x·W1 + b1)·W2 + b2)` computed one position at a time.
/// Returns `(out, hidden)`.
#[allow(clippy::too_many_arguments)]
pub fn ffn(x: &Mat, w1: &Mat, b1: &[f64], w2: &Mat, b2: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> (Mat, Mat) {
    let mut out = Vec::new();
    let mut hidden = Vec::new();
    for row in x {
        let hrow: Vec<f64> = (0..b1.len())
            .map(|u| {
                let mut s = 0.0;
                for (p, xv) in row.iter().enumerate() {
                    s += xv * w1[p][u];
                }
                (s + b1[u]).max(0.0)
            })
            .collect();
        let res: Vec<f64> = (0..row.len())
            .map(|c| {
                let mut s = 0.0;
                for (u, hv) in hrow.iter().enumerate() {
                    s += hv * w2[u][c];
                }
                row[c] + s + b2[c]
            })
            .collect();
        out.push(layer_norm(&vec![res], gain, bias, eps).remove(0));
        hidden.push(hrow);
    }
    (out, hidden)
}

/// Multi-dimensional source2token pooling over the real rows of `u`.
/// Returns `(pooled, weights)`.
pub fn multi_dim_pool(u: &Mat, first: &Proj, second: &Proj, real: &[bool], eps: f64) -> (Vec<f64>, Mat) {
    let l = second.apply(&map(&first.apply(u, eps), elu), eps);
    let (n, d) = (u.len(), u[0].len());
    let mut weights = vec![vec![0.0; d]; n];
    let mut pooled = vec![0.0; d];
    for c in 0..d {
        let max = (0..n).filter(|&i| real[i]).map(|i| l[i][c]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&i| real[i]).map(|i| (l[i][c] - max).exp()).sum();
        for i in (0..n).filter(|&i| real[i]) {
            weights[i][c] = (l[i][c] - max).exp() / z;
            pooled[c] += weights[i][c] * u[i][c];
        }
    }
    (pooled, weights)
}
