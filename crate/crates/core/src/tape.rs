//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward operation appends a node holding its output value and the
//! ids of its inputs; ids are handed out in creation order, so the tape is
//! topologically sorted by construction. [`Tape::backward`] walks it in
//! reverse once and accumulates a gradient for every node that (transitively)
//! depends on a `requires_grad` leaf.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    matmul_nt_raw, matmul_raw, matmul_tn_raw, transpose_raw, Result, Tensor, TensorError,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    /// ELU with α = 1.
    Elu,
    Sigmoid,
    Tanh,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        /// `b` is a single row broadcast over every row of `a`.
        broadcast: bool,
    },
    Unary(UnaryKind, Var),
    Scale(Var, f64),
    AddScalar(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumRows(Var),
    SumAll(Var),
    MaxRows {
        a: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        a: Var,
        mask: Vec<f64>,
    },
    NllMean {
        probs: Var,
        targets: Vec<usize>,
        floor: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
enum Mode {
    Eval,
    Train(Box<ChaCha8Rng>),
}

/// Single-writer record of one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    stochastic: bool,
}

impl Tape {
    /// A tape on which dropout is the identity.
    pub fn eval() -> Self {
        Self {
            nodes: Vec::new(),
            mode: Mode::Eval,
            stochastic: false,
        }
    }

    /// A tape on which dropout samples masks from `rng`.
    pub fn train(rng: ChaCha8Rng) -> Self {
        Self {
            nodes: Vec::new(),
            mode: Mode::Train(Box::new(rng)),
            stochastic: false,
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self.mode, Mode::Train(_))
    }

    /// True once a dropout mask has actually been sampled on this tape.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    /// Gives the dropout generator back, e.g. to carry it across steps.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        match self.mode {
            Mode::Train(rng) => Some(*rng),
            Mode::Eval => None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = Tensor::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul_nt")?;
        let (n, k2) = bv.dims2("matmul_nt")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul_nt",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = Tensor::new(vec![m, n], matmul_nt_raw(av.data(), bv.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMulNt(a, b), rg, "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg, "transpose")
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if bv.len() == av.cols() && (bv.shape().len() == 1 || bv.rows() == 1) {
            true
        } else {
            return Err(TensorError::Shape {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        let cols = av.cols();
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast { bv.data()[i % cols] } else { bv.data()[i] };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Binary { kind, a, b, broadcast }, rg, name)
    }

    /// Elementwise sum; `b` may also be a single row added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, "sub")
    }

    /// Hadamard product, with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, "mul")
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Relu => |x| if x > 0.0 { x } else { 0.0 },
            UnaryKind::Elu => |x| if x > 0.0 { x } else { x.exp_m1() },
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Abs => f64::abs,
        };
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Unary(kind, a), rg, "unary")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Elu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * c).collect())?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x + c).collect())?;
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg, "add_scalar")
    }

    /// Row-wise softmax. Entries `<= threshold` get weight exactly zero; a row
    /// whose entries are all at or below the threshold becomes all zeros.
    pub fn softmax_rows(&mut self, a: Var, threshold: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), softmax_rows_raw(av.data(), av.cols(), threshold))?;
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg, "softmax_rows")
    }

    /// Normalizes every row of `x` over its last axis, then applies
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.len() != d || bv.len() != d {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        if d < 2 {
            return Err(TensorError::Contract(format!(
                "layer_norm needs at least 2 features, got {d}"
            )));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2("slice_cols")?;
        if start + len > n || len == 0 {
            return Err(TensorError::Contract(format!(
                "slice_cols {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av.data()[i * n + start..i * n + start + len]);
        }
        let out = Tensor::new(vec![m, len], data)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceCols { a, start }, rg, "slice_cols")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2("slice_rows")?;
        if start + len > m || len == 0 {
            return Err(TensorError::Contract(format!(
                "slice_rows {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let out = Tensor::new(vec![len, n], av.data()[start * n..(start + len) * n].to_vec())?;
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceRows { a, start }, rg, "slice_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.value(*first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = self.value(*p).dims2("concat_cols")?;
            if pm != m {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: self.value(*p).shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(vec![m, total], data)?;
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let (_, n) = self.value(*first).dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let pv = self.value(*p);
            let (pm, pn) = pv.dims2("concat_rows")?;
            if pn != n {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: pv.shape().to_vec(),
                });
            }
            rows += pm;
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(vec![rows, n], data)?;
        let rg = self.rg(parts);
        self.push(out, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    /// Column sums of an `m×n` matrix as a `1×n` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2("sum_rows")?;
        let mut s = vec![0.0; n];
        for i in 0..m {
            for (acc, v) in s.iter_mut().zip(&av.data()[i * n..(i + 1) * n]) {
                *acc += v;
            }
        }
        let out = Tensor::new(vec![1, n], s)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::SumRows(a), rg, "sum_rows")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg, "sum_all")
    }

    /// Column-wise maximum over the rows flagged in `valid`, as a `1×n` row,
    /// plus the winning row per column. Ties go to the lowest row index.
    pub fn max_rows_masked(&mut self, a: Var, valid: &[bool]) -> Result<(Var, Vec<usize>)> {
        let av = self.value(a);
        let (m, n) = av.dims2("max_rows_masked")?;
        if valid.len() != m {
            return Err(TensorError::Shape {
                op: "max_rows_masked",
                lhs: av.shape().to_vec(),
                rhs: vec![valid.len()],
            });
        }
        let first = valid
            .iter()
            .position(|&v| v)
            .ok_or_else(|| TensorError::Contract("max pooling over zero real positions".into()))?;
        let mut best = av.row(first).to_vec();
        let mut argmax = vec![first; n];
        for i in (first + 1..m).filter(|&i| valid[i]) {
            for j in 0..n {
                let v = av.get(i, j);
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let out = Tensor::new(vec![1, n], best)?;
        let rg = self.rg(&[a]);
        let v = self.push(
            out,
            Op::MaxRows {
                a,
                argmax: argmax.clone(),
            },
            rg,
            "max_rows_masked",
        )?;
        Ok((v, argmax))
    }

    /// Inverted dropout. Identity on an eval tape or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Contract(format!("dropout probability {p} not in [0, 1)")));
        }
        let rng = match &mut self.mode {
            Mode::Train(rng) if p > 0.0 => rng,
            _ => return Ok(a),
        };
        let keep = 1.0 / (1.0 - p);
        let n = self.nodes[a.0].value.len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.stochastic = true;
        let av = self.value(a);
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Dropout { a, mask }, rg, "dropout")
    }

    /// Mean negative log-probability of `targets` under the rows of `probs`.
    /// Probabilities below `floor` are clamped; the second value counts how
    /// many gold entries needed clamping.
    pub fn nll_mean(&mut self, probs: Var, targets: &[usize], floor: f64) -> Result<(Var, usize)> {
        let pv = self.value(probs);
        let (m, n) = pv.dims2("nll_mean")?;
        if targets.len() != m || targets.iter().any(|&t| t >= n) {
            return Err(TensorError::Shape {
                op: "nll_mean",
                lhs: pv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut clamped = 0;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let p = pv.get(i, t);
            if p < floor {
                clamped += 1;
            }
            total -= p.max(floor).ln();
        }
        let rg = self.rg(&[probs]);
        let v = self.push(
            Tensor::scalar(total / m as f64),
            Op::NllMean {
                probs,
                targets: targets.to_vec(),
                floor,
            },
            rg,
            "nll_mean",
        )?;
        Ok((v, clamped))
    }

    /// Propagates d(loss)/d(node) from a single-element `loss` back to every
    /// node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    // g[m×n] · bᵀ
                    accumulate(grads, *a, &matmul_nt_raw(g, bv.data(), m, n, k));
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, &matmul_tn_raw(av.data(), g, m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[0];
                if self.requires_grad(*a) {
                    accumulate(grads, *a, &matmul_raw(g, bv.data(), m, n, k));
                }
                if self.requires_grad(*b) {
                    // gᵀ[n×m] · a[m×k]
                    accumulate(grads, *b, &matmul_tn_raw(g, av.data(), m, n, k));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (out.shape()[0], out.shape()[1]);
                accumulate(grads, *a, &transpose_raw(g, m, n));
            }
            Op::Binary { kind, a, b, broadcast } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                let bidx = |i: usize| if *broadcast { i % cols } else { i };
                if self.requires_grad(*a) {
                    let ga: Vec<f64> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                        BinaryKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * bv.data()[bidx(i)]).collect(),
                    };
                    accumulate(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; bv.len()];
                    for (i, gi) in g.iter().enumerate() {
                        gb[bidx(i)] += match kind {
                            BinaryKind::Add => *gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * av.data()[i],
                        };
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = out.data();
                let ga: Vec<f64> = (0..g.len())
                    .map(|i| {
                        let d = match kind {
                            UnaryKind::Relu => f64::from(u8::from(x[i] > 0.0)),
                            UnaryKind::Elu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    y[i] + 1.0
                                }
                            }
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Abs => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        g[i] * d
                    })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(grads, *a, &ga);
            }
            Op::AddScalar(a) => accumulate(grads, *a, g),
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let y = out.data();
                let mut ga = vec![0.0; y.len()];
                for r in 0..out.rows() {
                    let (ys, gs) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        ga[r * n + j] = ys[j] * (gs[j] - dot);
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let gv = self.value(*gain).data();
                if self.requires_grad(*gain) {
                    let mut gg = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        gg[i % d] += gi * xhat[i];
                    }
                    accumulate(grads, *gain, &gg);
                }
                if self.requires_grad(*bias) {
                    let mut gb = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % d] += gi;
                    }
                    accumulate(grads, *bias, &gb);
                }
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; g.len()];
                    for (r, is) in inv_std.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let dxhat: Vec<f64> = g[span.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(&xhat[span.clone()]).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] = is * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let (m, n) = (av.shape()[0], av.shape()[1]);
                let len = out.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                accumulate(grads, *a, &ga);
            }
            Op::SliceRows { a, start } => {
                let n = out.cols();
                let (lo, hi) = (start * n, start * n + g.len());
                if self.requires_grad(*a) {
                    let slot = grads[a.0].get_or_insert_with(|| vec![0.0; self.value(*a).len()]);
                    for (s, v) in slot[lo..hi].iter_mut().zip(g) {
                        *s += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = out.shape()[0];
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(grads, *p, &gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.requires_grad(*p) {
                        accumulate(grads, *p, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SumRows(a) => {
                let n = out.cols();
                let m = self.value(*a).rows();
                let ga: Vec<f64> = (0..m * n).map(|i| g[i % n]).collect();
                accumulate(grads, *a, &ga);
            }
            Op::SumAll(a) => {
                let ga = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &ga);
            }
            Op::MaxRows { a, argmax } => {
                let av = self.value(*a);
                let n = av.cols();
                let mut ga = vec![0.0; av.len()];
                for (j, &i) in argmax.iter().enumerate() {
                    ga[i * n + j] += g[j];
                }
                accumulate(grads, *a, &ga);
            }
            Op::Dropout { a, mask } => {
                let ga: Vec<f64> = g.iter().zip(mask).map(|(x, m)| x * m).collect();
                accumulate(grads, *a, &ga);
            }
            Op::NllMean { probs, targets, floor } => {
                let pv = self.value(*probs);
                let (m, n) = (pv.shape()[0], pv.shape()[1]);
                let mut gp = vec![0.0; m * n];
                for (i, &t) in targets.iter().enumerate() {
                    let p = pv.get(i, t);
                    if p >= *floor {
                        gp[i * n + t] = -g[0] / (m as f64 * p);
                    }
                }
                accumulate(grads, *probs, &gp);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows_raw(x: &[f64], cols: usize, threshold: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row
            .iter()
            .copied()
            .filter(|&v| v > threshold)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            if v > threshold {
                *d = (v - max).exp();
                sum += *d;
            }
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` does not require a gradient or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// The gradient of `v`, with zeros where nothing flowed back.
    pub fn dense(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}
