//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs; node ids are therefore a topological order. [`Tape::backward`]
//! walks the list once in reverse and accumulates vector-Jacobian products
//! into the inputs that require gradients.

use std::sync::Arc;

use super::{gemm_acc, Tensor};
use crate::error::{Error, Result};
use crate::hyperbolic;
use crate::rng::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Elu(Var, f64),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    Dropout(Var, Vec<f64>),
    LogSoftmaxRows(Var),
    NllLoss(Var, Arc<[usize]>, Arc<[usize]>),
    RowDot(Var, Var),
    NormalizeRows(Var),
    ExpMapOrigin(Var, f64),
    LogMapOrigin(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
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

fn check_segments(op: &'static str, targets: &[usize], rows: usize, n: usize) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::dim(op, format!("{} targets for {rows} rows", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::dim(op, format!("target {bad} out of range for {n} nodes")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if self.value(a).rows() != self.value(b).rows() || self.value(a).cols() != self.value(b).cols() {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `x (n x d) + bias (1 x d)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.cols();
        if bv.numel() != d {
            return Err(Error::dim("add_row", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::matrix(xv.rows(), d, data)?;
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies row `r` of `x (n x d)` by `w[r]` where `w` is `n x 1`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.numel() != xv.rows() {
            return Err(Error::dim("scale_rows", format!("{:?} by {:?}", xv.shape(), wv.shape())));
        }
        let d = xv.cols();
        let mut data = xv.data().to_vec();
        if d > 0 {
            for (row, &s) in data.chunks_mut(d).zip(wv.data()) {
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::ScaleRows(x, w), &[x, w]))
    }

    /// `s * x` for a learnable scalar `s`.
    pub fn mul_scalar(&mut self, s: Var, x: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::dim("mul_scalar", format!("{:?} is not a scalar", self.value(s).shape())));
        }
        let sv = self.value(s).data()[0];
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * sv).collect())?;
        Ok(self.push(out, Op::MulScalar(s, x), &[s, x]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor { shape: xv.shape.clone(), data: xv.data.iter().map(|v| v * c).collect() };
        self.push(out, Op::Scale(x, c), &[x])
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let out = Tensor { shape: xv.shape.clone(), data: xv.data.iter().map(|&v| f(v)).collect() };
        self.push(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { alpha * v.exp_m1() }, Op::Elu(x, alpha))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::numeric("log", format!("non-positive input {bad}")));
        }
        Ok(self.map(x, f64::ln, Op::Log(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let cols = self.value(*first).cols();
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(Error::dim("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
            rows += self.value(*p).rows();
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start > end || end > c {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {c} columns")));
        }
        let mut data = Vec::with_capacity(xv.rows() * (end - start));
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let out = Tensor::matrix(xv.rows(), end - start, data)?;
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    /// Row `k` of the result is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::dim("gather_rows", format!("index {bad} out of range for {n} rows")));
        }
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::matrix(index.len(), d, data)?;
        Ok(self.push(out, Op::GatherRows(x, index), &[x]))
    }

    /// Sums message rows into their target node: output is `n_nodes x d`.
    pub fn segment_sum(&mut self, messages: Var, targets: Arc<[usize]>, n_nodes: usize) -> Result<Var> {
        let mv = self.value(messages);
        let d = mv.cols();
        check_segments("segment_sum", &targets, mv.rows(), n_nodes)?;
        let mut data = vec![0.0; n_nodes * d];
        for (e, &t) in targets.iter().enumerate() {
            let dst = &mut data[t * d..(t + 1) * d];
            for (o, v) in dst.iter_mut().zip(mv.row(e)) {
                *o += v;
            }
        }
        let out = Tensor::matrix(n_nodes, d, data)?;
        Ok(self.push(out, Op::SegmentSum(messages, targets), &[messages]))
    }

    /// Softmax over the edges sharing a target node, independently per
    /// column. Uses per-segment max subtraction.
    pub fn segment_softmax(&mut self, scores: Var, targets: Arc<[usize]>, n_nodes: usize) -> Result<Var> {
        let sv = self.value(scores);
        let d = sv.cols();
        check_segments("segment_softmax", &targets, sv.rows(), n_nodes)?;
        if let Some(bad) = sv.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric("segment_softmax", format!("non-finite score {bad}")));
        }
        let mut max = vec![f64::NEG_INFINITY; n_nodes * d];
        for (e, &t) in targets.iter().enumerate() {
            for (m, &v) in max[t * d..(t + 1) * d].iter_mut().zip(sv.row(e)) {
                *m = m.max(v);
            }
        }
        let mut out = vec![0.0; sv.rows() * d];
        let mut denom = vec![0.0; n_nodes * d];
        for (e, &t) in targets.iter().enumerate() {
            for c in 0..d {
                let w = (sv.data()[e * d + c] - max[t * d + c]).exp();
                out[e * d + c] = w;
                denom[t * d + c] += w;
            }
        }
        for (e, &t) in targets.iter().enumerate() {
            for c in 0..d {
                out[e * d + c] /= denom[t * d + c];
            }
        }
        let out = Tensor::new(sv.shape().to_vec(), out)?;
        Ok(self.push(out, Op::SegmentSoftmax(scores, targets), &[scores]))
    }

    /// Inverted dropout. Identity (the same `Var`) when `!training` or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.numel()).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout(x, mask), &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.cols();
        let mut data = xv.data().to_vec();
        if d > 0 {
            for row in data.chunks_mut(d) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
        }
        let out = Tensor { shape: xv.shape.clone(), data };
        self.push(out, Op::LogSoftmaxRows(x), &[x])
    }

    /// Mean negative log-likelihood over `rows`, reading log-probabilities
    /// from `logp`. `labels[k]` is the class of `rows[k]`.
    pub fn nll_loss(&mut self, logp: Var, rows: Arc<[usize]>, labels: Arc<[usize]>) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Contract("nll_loss over an empty mask".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::dim("nll_loss", "rows and labels differ in length"));
        }
        let lv = self.value(logp);
        let (n, c) = (lv.rows(), lv.cols());
        let mut total = 0.0;
        for (&r, &y) in rows.iter().zip(labels.iter()) {
            if r >= n || y >= c {
                return Err(Error::dim("nll_loss", format!("row {r} / label {y} out of range")));
            }
            total -= lv.get(r, y);
        }
        let out = Tensor::scalar(total / rows.len() as f64);
        Ok(self.push(out, Op::NllLoss(logp, rows, labels), &[logp]))
    }

    /// Row-wise dot product of two equally shaped matrices: `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let out = Tensor::matrix(av.rows(), 1, data)?;
        Ok(self.push(out, Op::RowDot(a, b), &[a, b]))
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.cols();
        let mut data = xv.data().to_vec();
        if d > 0 {
            for row in data.chunks_mut(d) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        let out = Tensor { shape: xv.shape.clone(), data };
        self.push(out, Op::NormalizeRows(x), &[x])
    }

    /// Row-wise exponential map at the hyperboloid origin. Rows are ambient
    /// tangent vectors whose time coordinate (column 0) is ignored.
    pub fn exp_map_origin(&mut self, x: Var, k: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if d < 2 {
            return Err(Error::dim("exp_map_origin", "need at least one spatial coordinate"));
        }
        let mut data = vec![0.0; xv.numel()];
        for r in 0..xv.rows() {
            hyperbolic::exp_origin_into(&xv.row(r)[1..], k, &mut data[r * d..(r + 1) * d])?;
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::ExpMapOrigin(x, k), &[x]))
    }

    /// Row-wise logarithmic map at the hyperboloid origin; output rows have a
    /// zero time coordinate.
    pub fn log_map_origin(&mut self, x: Var, k: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if d < 2 {
            return Err(Error::dim("log_map_origin", "need at least one spatial coordinate"));
        }
        let mut data = vec![0.0; xv.numel()];
        for r in 0..xv.rows() {
            hyperbolic::log_origin_into(&xv.row(r)[1..], k, &mut data[r * d..(r + 1) * d])?;
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LogMapOrigin(x, k), &[x]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|data| Tensor { shape: node.value.shape.clone(), data })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    let bt = bv.transpose();
                    let ga = self.grad_slot(grads, *a);
                    gemm_acc(g, bt.data(), ga, m, n, k);
                }
                if self.requires_grad(*b) {
                    let at = av.transpose();
                    let gb = self.grad_slot(grads, *b);
                    gemm_acc(at.data(), g, gb, k, m, n);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        axpy(self.grad_slot(grads, *v), g, 1.0);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.requires_grad(*x) {
                    axpy(self.grad_slot(grads, *x), g, 1.0);
                }
                if self.requires_grad(*bias) {
                    let d = out.cols();
                    let gb = self.grad_slot(grads, *bias);
                    for row in g.chunks(d.max(1)) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let ga = self.grad_slot(grads, *a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.requires_grad(*b) {
                    let gb = self.grad_slot(grads, *b);
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::ScaleRows(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let d = xv.cols();
                if self.requires_grad(*x) {
                    let gx = self.grad_slot(grads, *x);
                    for r in 0..xv.rows() {
                        let s = wv.data()[r];
                        for c in 0..d {
                            gx[r * d + c] += g[r * d + c] * s;
                        }
                    }
                }
                if self.requires_grad(*w) {
                    let gw = self.grad_slot(grads, *w);
                    for r in 0..xv.rows() {
                        gw[r] += dot(&g[r * d..(r + 1) * d], xv.row(r));
                    }
                }
            }
            Op::MulScalar(s, x) => {
                let sv = self.value(*s).data()[0];
                if self.requires_grad(*s) {
                    let gs = self.grad_slot(grads, *s);
                    gs[0] += dot(g, self.value(*x).data());
                }
                if self.requires_grad(*x) {
                    axpy(self.grad_slot(grads, *x), g, sv);
                }
            }
            Op::Scale(x, c) => axpy(self.grad_slot(grads, *x), g, *c),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = self.grad_slot(grads, *x);
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Elu(x, alpha) => {
                let xv = self.value(*x).data();
                let gx = self.grad_slot(grads, *x);
                for i in 0..g.len() {
                    gx[i] += if xv[i] > 0.0 { g[i] } else { g[i] * (out.data[i] + alpha) };
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let gx = self.grad_slot(grads, *x);
                for i in 0..g.len() {
                    gx[i] += if xv[i] > 0.0 { g[i] } else { g[i] * slope };
                }
            }
            Op::Exp(x) => {
                let gx = self.grad_slot(grads, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * out.data[i];
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let gx = self.grad_slot(grads, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] / xv[i];
                }
            }
            Op::Sum(x) => {
                let gx = self.grad_slot(grads, *x);
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        let gp = self.grad_slot(grads, *p);
                        for r in 0..out.rows() {
                            axpy(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w], 1.0);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if self.requires_grad(*p) {
                        axpy(self.grad_slot(grads, *p), &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let c = self.value(*x).cols();
                let w = out.cols();
                let gx = self.grad_slot(grads, *x);
                for r in 0..out.rows() {
                    axpy(&mut gx[r * c + start..r * c + start + w], &g[r * w..(r + 1) * w], 1.0);
                }
            }
            Op::GatherRows(x, index) => {
                let d = out.cols();
                let gx = self.grad_slot(grads, *x);
                for (k, &i) in index.iter().enumerate() {
                    axpy(&mut gx[i * d..(i + 1) * d], &g[k * d..(k + 1) * d], 1.0);
                }
            }
            Op::SegmentSum(m, targets) => {
                let d = out.cols();
                let gm = self.grad_slot(grads, *m);
                for (e, &t) in targets.iter().enumerate() {
                    axpy(&mut gm[e * d..(e + 1) * d], &g[t * d..(t + 1) * d], 1.0);
                }
            }
            Op::SegmentSoftmax(s, targets) => {
                let d = out.cols();
                let n_seg = targets.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![0.0; n_seg * d];
                for (e, &t) in targets.iter().enumerate() {
                    for c in 0..d {
                        inner[t * d + c] += g[e * d + c] * out.data[e * d + c];
                    }
                }
                let gs = self.grad_slot(grads, *s);
                for (e, &t) in targets.iter().enumerate() {
                    for c in 0..d {
                        let y = out.data[e * d + c];
                        gs[e * d + c] += y * (g[e * d + c] - inner[t * d + c]);
                    }
                }
            }
            Op::Dropout(x, mask) => {
                let gx = self.grad_slot(grads, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
            Op::LogSoftmaxRows(x) => {
                let d = out.cols();
                let gx = self.grad_slot(grads, *x);
                for r in 0..out.rows() {
                    let gr = &g[r * d..(r + 1) * d];
                    let total: f64 = gr.iter().sum();
                    for c in 0..d {
                        gx[r * d + c] += gr[c] - out.data[r * d + c].exp() * total;
                    }
                }
            }
            Op::NllLoss(x, rows, labels) => {
                let c = self.value(*x).cols();
                let scale = g[0] / rows.len() as f64;
                let gx = self.grad_slot(grads, *x);
                for (&r, &y) in rows.iter().zip(labels.iter()) {
                    gx[r * c + y] -= scale;
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let d = av.cols();
                for (v, other) in [(a, bv), (b, av)] {
                    if self.requires_grad(*v) {
                        let gv = self.grad_slot(grads, *v);
                        for r in 0..av.rows() {
                            axpy(&mut gv[r * d..(r + 1) * d], other.row(r), g[r]);
                        }
                    }
                }
            }
            Op::NormalizeRows(x) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let gx = self.grad_slot(grads, *x);
                for r in 0..xv.rows() {
                    let norm = dot(xv.row(r), xv.row(r)).sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let y = &out.data[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let proj = dot(y, gr);
                    for c in 0..d {
                        gx[r * d + c] += (gr[c] - y[c] * proj) / norm;
                    }
                }
            }
            Op::ExpMapOrigin(x, k) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let gx = self.grad_slot(grads, *x);
                for r in 0..xv.rows() {
                    hyperbolic::exp_origin_vjp(
                        &xv.row(r)[1..],
                        *k,
                        &g[r * d..(r + 1) * d],
                        &mut gx[r * d + 1..(r + 1) * d],
                    );
                }
            }
            Op::LogMapOrigin(x, k) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let gx = self.grad_slot(grads, *x);
                for r in 0..xv.rows() {
                    hyperbolic::log_origin_vjp(
                        &xv.row(r)[1..],
                        *k,
                        &g[r * d + 1..(r + 1) * d],
                        &mut gx[r * d + 1..(r + 1) * d],
                    );
                }
            }
        }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
