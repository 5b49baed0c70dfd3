//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already a topological order. [`Graph::backward`] walks it in
//! reverse and accumulates adjoints into every node that requires a gradient.
//!
//! Stop-gradient barriers are expressed by entering a value as a constant
//! (via [`Graph::constant`] or [`Graph::detach`]); no adjoint ever flows into
//! a constant, so nothing has to be zeroed after the fact.

use super::tensor::{matmul_acc, matmul_t_acc, t_matmul_acc, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    Gelu(Var),
    Tanh(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    CrossEntropy(Var, Vec<usize>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// `0.5·(1 + tanh(u))` of the tanh-form GELU, written as a logistic.
fn gelu_gate(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    1.0 / (1.0 + (-2.0 * u).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives an adjoint.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, trainable: bool) -> Var {
        self.push(t, Op::Leaf, trainable)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul {:?} x {:?}", va.shape(), vb.shape());
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; m * n];
        matmul_acc(va.data(), vb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_rows(m, n, out), Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.cols(), "matmul_t {:?} x {:?}ᵀ", va.shape(), vb.shape());
        let (m, k, n) = (va.rows(), va.cols(), vb.rows());
        let mut out = vec![0.0; m * n];
        matmul_t_acc(va.data(), vb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_rows(m, n, out), Op::MatMulT(a, b), rg)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_rows(va.rows(), va.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast-add a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows(), 1);
        assert_eq!(va.cols(), vr.cols(), "add_row width mismatch");
        let c = va.cols();
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(vr.data()) {
                *x += b;
            }
        }
        let t = Tensor::from_rows(va.rows(), c, data);
        let rg = self.rg(a) || self.rg(row);
        self.push(t, Op::AddRow(a, row), rg)
    }

    /// Broadcast-multiply every row of `a` by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows(), 1);
        assert_eq!(va.cols(), vr.cols(), "mul_row width mismatch");
        let c = va.cols();
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(vr.data()) {
                *x *= b;
            }
        }
        let t = Tensor::from_rows(va.rows(), c, data);
        let rg = self.rg(a) || self.rg(row);
        self.push(t, Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    /// `a + c` for a constant tensor `c` (attention masks, fixed offsets).
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), c.shape(), "add_const shape mismatch");
        let data = va.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_rows(va.rows(), va.cols(), data);
        let rg = self.rg(a);
        self.push(t, Op::AddConst(a), rg)
    }

    /// Row-wise softmax. Entries at `-inf` receive exactly zero weight.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut out = vec![0.0; r * c];
        let mut rstd = Vec::with_capacity(r);
        for i in 0..r {
            let row = va.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (x - mean) * s;
            }
            rstd.push(s);
        }
        let rg = self.rg(a);
        self.push(Tensor::from_rows(r, c, out), Op::LayerNorm(a, rstd), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self
            .value(a)
            .map(|x| x * gelu_gate(x));
        let rg = self.rg(a);
        self.push(t, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(t, Op::Abs(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(t, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().sum::<f64>() / va.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_rows(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = vec![0.0; rows * cols];
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols height mismatch");
            let c = v.cols();
            for i in 0..rows {
                data[i * cols + off..i * cols + off + c].copy_from_slice(v.row(i));
            }
            off += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_rows(rows, cols, data), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.rows(), "slice_rows out of range");
        let c = va.cols();
        let t = Tensor::from_rows(end - start, c, va.data()[start * c..end * c].to_vec());
        let rg = self.rg(a);
        self.push(t, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.cols(), "slice_cols out of range");
        let (r, c, w) = (va.rows(), va.cols(), end - start);
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&va.data()[i * c + start..i * c + end]);
        }
        let rg = self.rg(a);
        self.push(Tensor::from_rows(r, w, data), Op::SliceCols(a, start), rg)
    }

    /// Rows of `table` selected by `idx` (embedding lookup, row selection).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let vt = self.value(table);
        let c = vt.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < vt.rows(), "gather index {i} out of {}", vt.rows());
            data.extend_from_slice(vt.row(i));
        }
        let rg = self.rg(table);
        self.push(Tensor::from_rows(idx.len(), c, data), Op::GatherRows(table, idx.to_vec()), rg)
    }

    /// Mean negative log-likelihood of `targets[r]` under `softmax(logits[r])`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.rows(), targets.len(), "cross_entropy row/target mismatch");
        let probs = softmax_rows(vl);
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = vl.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let rg = self.rg(logits);
        let op = Op::CrossEntropy(logits, targets.to_vec(), probs.into_data());
        self.push(Tensor::scalar(loss / n), op, rg)
    }

    /// Mean squared difference between `a` and `b`.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &node.value, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Gradients { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.rg(v) {
            return None;
        }
        let shape = self.value(v).shape();
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]))
                .data_mut(),
        )
    }

    fn propagate(&self, node: &Node, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if let Some(da) = self.acc(grads, *a) {
                    matmul_t_acc(gd, vb.data(), da, m, n, k);
                }
                if let Some(db) = self.acc(grads, *b) {
                    t_matmul_acc(va.data(), gd, db, m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                // out = a · bᵀ, a: m×k, b: n×k
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                if let Some(da) = self.acc(grads, *a) {
                    matmul_acc(gd, vb.data(), da, m, n, k);
                }
                if let Some(db) = self.acc(grads, *b) {
                    t_matmul_acc(gd, va.data(), db, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        add_into(d, gd);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    add_into(d, gd);
                }
                if let Some(d) = self.acc(grads, *b) {
                    for (x, y) in d.iter_mut().zip(gd) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, y), gg) in d.iter_mut().zip(vb).zip(gd) {
                        *x += y * gg;
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for ((x, y), gg) in d.iter_mut().zip(va).zip(gd) {
                        *x += y * gg;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let c = out.cols();
                if let Some(d) = self.acc(grads, *a) {
                    add_into(d, gd);
                }
                if let Some(d) = self.acc(grads, *row) {
                    for chunk in gd.chunks(c) {
                        add_into(d, chunk);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let c = out.cols();
                let (va, vr) = (self.value(*a), self.value(*row));
                if let Some(d) = self.acc(grads, *a) {
                    for (dchunk, gchunk) in d.chunks_mut(c).zip(gd.chunks(c)) {
                        for ((x, gg), r) in dchunk.iter_mut().zip(gchunk).zip(vr.data()) {
                            *x += gg * r;
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *row) {
                    for (achunk, gchunk) in va.data().chunks(c).zip(gd.chunks(c)) {
                        for ((x, gg), av) in d.iter_mut().zip(gchunk).zip(achunk) {
                            *x += gg * av;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = self.acc(grads, *a) {
                    for (x, gg) in d.iter_mut().zip(gd) {
                        *x += s * gg;
                    }
                }
            }
            Op::AddConst(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    add_into(d, gd);
                }
            }
            Op::Softmax(a) => {
                let c = out.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for ((drow, yrow), grow) in
                        d.chunks_mut(c).zip(out.data().chunks(c)).zip(gd.chunks(c))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for ((x, y), gg) in drow.iter_mut().zip(yrow).zip(grow) {
                            *x += y * (gg - dot);
                        }
                    }
                }
            }
            Op::LayerNorm(a, rstd) => {
                let c = out.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for (((drow, yrow), grow), s) in d
                        .chunks_mut(c)
                        .zip(out.data().chunks(c))
                        .zip(gd.chunks(c))
                        .zip(rstd)
                    {
                        let mg = grow.iter().sum::<f64>() / c as f64;
                        let mgy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                        for ((x, y), gg) in drow.iter_mut().zip(yrow).zip(grow) {
                            *x += s * (gg - mg - y * mgy);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let va = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, &v), gg) in d.iter_mut().zip(va).zip(gd) {
                        let s = gelu_gate(v);
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        *x += gg * (s + 2.0 * v * s * (1.0 - s) * du);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, y), gg) in d.iter_mut().zip(out.data()).zip(gd) {
                        *x += gg * (1.0 - y * y);
                    }
                }
            }
            Op::Abs(a) => {
                let va = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, &v), gg) in d.iter_mut().zip(va).zip(gd) {
                        let s = if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *x += gg * s;
                    }
                }
            }
            Op::Square(a) => {
                let va = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, &v), gg) in d.iter_mut().zip(va).zip(gd) {
                        *x += 2.0 * v * gg;
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                if let Some(d) = self.acc(grads, *a) {
                    for x in d.iter_mut() {
                        *x += g0;
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let g0 = gd[0] / n;
                if let Some(d) = self.acc(grads, *a) {
                    for x in d.iter_mut() {
                        *x += g0;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let c = out.cols();
                let mut off = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if let Some(d) = self.acc(grads, p) {
                        add_into(d, &gd[off * c..(off + r) * c]);
                    }
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, cols) = (out.rows(), out.cols());
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(d) = self.acc(grads, p) {
                        for i in 0..rows {
                            add_into(&mut d[i * w..(i + 1) * w], &gd[i * cols + off..i * cols + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let c = out.cols();
                if let Some(d) = self.acc(grads, *a) {
                    add_into(&mut d[start * c..start * c + gd.len()], gd);
                }
            }
            Op::SliceCols(a, start) => {
                let (r, w) = (out.rows(), out.cols());
                let c = self.value(*a).cols();
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..r {
                        add_into(&mut d[i * c + start..i * c + start + w], &gd[i * w..(i + 1) * w]);
                    }
                }
            }
            Op::GatherRows(table, idx) => {
                let c = out.cols();
                if let Some(d) = self.acc(grads, *table) {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut d[i * c..(i + 1) * c], &gd[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let c = self.value(*logits).cols();
                let scale = gd[0] / targets.len() as f64;
                if let Some(d) = self.acc(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        let drow = &mut d[r * c..(r + 1) * c];
                        for (x, p) in drow.iter_mut().zip(&probs[r * c..(r + 1) * c]) {
                            *x += scale * p;
                        }
                        drow[t] -= scale;
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn softmax_rows(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = t.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[i * c..(i + 1) * c];
        let mut sum = 0.0;
        for (y, &x) in o.iter_mut().zip(row) {
            *y = (x - max).exp();
            sum += *y;
        }
        for y in o.iter_mut() {
            *y /= sum;
        }
    }
    Tensor::from_rows(r, c, out)
}
