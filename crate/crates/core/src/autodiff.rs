//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and the indices of its inputs. [`Graph::backward`] walks the tape in
//! reverse and accumulates vector-Jacobian products. Leaves created with
//! [`Graph::constant`] (or produced by [`Graph::detach`]) never receive
//! gradient, which is how stop-gradient is expressed.

use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row padding policy for [`Graph::shift_rows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Zero,
    Edge,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    Shift(Var, isize, Pad),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    L1Mean(Var, Mat),
    BceLogits(Var, Mat, f64),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shift_source(r: usize, offset: isize, n: usize, pad: Pad) -> Option<usize> {
    let src = r as isize - offset;
    if (0..n as isize).contains(&src) {
        Some(src as usize)
    } else {
        match pad {
            Pad::Zero => None,
            Pad::Edge => Some(src.clamp(0, n as isize - 1) as usize),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Same value, cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `(1, C)` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.rows, 1, "add_row expects a single row");
        assert_eq!(am.cols, rm.cols, "add_row width mismatch");
        let mut value = am.clone();
        for r in 0..value.rows {
            for (v, b) in value.row_mut(r).iter_mut().zip(&rm.data) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// `out[r] = a[r - offset]`; rows falling outside are filled per `pad`.
    pub fn shift_rows(&mut self, a: Var, offset: isize, pad: Pad) -> Var {
        let m = self.value(a);
        let mut value = Mat::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            if let Some(src) = shift_source(r, offset, m.rows, pad) {
                value.row_mut(r).copy_from_slice(m.row(src));
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::Shift(a, offset, pad), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select_rows(idx);
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, idx.to_vec()), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean absolute error against a constant target.
    pub fn l1_mean(&mut self, a: Var, target: &Mat) -> Var {
        let m = self.value(a);
        assert_eq!(m.shape(), target.shape(), "l1 shape mismatch");
        let n = m.len().max(1) as f64;
        let v: f64 = m.data.iter().zip(&target.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        let rg = self.rg(a);
        self.push(Mat::scalar(v), Op::L1Mean(a, target.clone()), rg)
    }

    /// Mean binary cross-entropy of logits against 0/1 targets, positive
    /// terms weighted by `pos_weight`.
    pub fn bce_logits(&mut self, logits: Var, targets: &Mat, pos_weight: f64) -> Var {
        let m = self.value(logits);
        assert_eq!(m.shape(), targets.shape(), "bce shape mismatch");
        let n = m.len().max(1) as f64;
        let v: f64 = m
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&z, &y)| pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z))
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        self.push(Mat::scalar(v), Op::BceLogits(logits, targets.clone(), pos_weight), rg)
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Mat, g: &Mat, grads: &mut [Option<Mat>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    let mut s = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in s.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *row, s);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(out, |d, y| d * (1.0 - y * y))),
            Op::Sigmoid(a) => self.accumulate(grads, *a, g.zip_map(out, |d, y| d * y * (1.0 - y))),
            Op::SoftmaxRows(a) => {
                let mut d = Mat::zeros(out.rows, out.cols);
                for r in 0..out.rows {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in d.row_mut(r).iter_mut().zip(y.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.rg(p) {
                        let mut d = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::Shift(a, offset, pad) => {
                let mut d = Mat::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    if let Some(src) = shift_source(r, *offset, g.rows, *pad) {
                        for (o, v) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let rows = self.value(*a).rows;
                let inv = 1.0 / rows as f64;
                let mut d = Mat::zeros(rows, g.cols);
                for r in 0..rows {
                    for (o, v) in d.row_mut(r).iter_mut().zip(&g.data) {
                        *o = v * inv;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let mut d = Mat::zeros(src.rows, src.cols);
                for (o, &i) in idx.iter().enumerate() {
                    for (dv, gv) in d.row_mut(i).iter_mut().zip(g.row(o)) {
                        *dv += gv;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Mat::filled(r, c, g.data[0]));
            }
            Op::L1Mean(a, target) => {
                let x = self.value(*a);
                let n = x.len().max(1) as f64;
                let scale = g.data[0] / n;
                let d = x.zip_map(target, |p, t| {
                    let diff = p - t;
                    if diff > 0.0 {
                        scale
                    } else if diff < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::BceLogits(a, targets, w) => {
                let z = self.value(*a);
                let n = z.len().max(1) as f64;
                let scale = g.data[0] / n;
                let d = z.zip_map(targets, |z, y| scale * (-w * y * sigmoid(-z) + (1.0 - y) * sigmoid(z)));
                self.accumulate(grads, *a, d);
            }
        }
    }
}
