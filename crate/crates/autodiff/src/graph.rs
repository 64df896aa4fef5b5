//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its value. A node tracks gradients when
//! any of its inputs does; [`Graph::backward`] walks the tape once in reverse.

use std::collections::{BTreeMap, HashMap};

use crate::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::AutodiffError;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Square(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    ColNorm(usize),
    SliceCols { src: usize, start: usize },
    SliceRows { src: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    RepeatRows { src: usize, times: usize },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        batch: usize,
        heads: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var, bool)>,
}

fn broadcast(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2], AutodiffError> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(AutodiffError::Shape { op, lhs: a, rhs: b }),
    }
}

/// Index into a possibly broadcast operand of shape `s` at output position (r, c).
#[inline]
fn bidx(s: [usize; 2], r: usize, c: usize) -> usize {
    let r = if s[0] == 1 { 0 } else { r };
    let c = if s[1] == 1 { 0 } else { c };
    r * s[1] + c
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
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Named parameter leaf; repeated calls with the same name return the same node.
    pub fn param(&mut self, name: &str, value: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(value.clone(), trainable);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v, trainable));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) loss, if `v` tracks gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradients of all trainable named parameters; zero for parameters the loss does not reach.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.param_order
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(name, v, _)| {
                let g = self.nodes[v.0].grad.clone().unwrap_or_else(|| {
                    let [r, c] = self.shape(*v);
                    Tensor::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect()
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(usize, usize) -> Op,
    ) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let [rows, cols] = broadcast(op, sa, sb)?;
        let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let data = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(da[bidx(sa, r, c)], db[bidx(sb, r, c)]));
                }
            }
            out
        };
        let value = Tensor::new(rows, cols, data)?;
        let rg = self.tracks(&[a.0, b.0]);
        Ok(self.push(value, make(a.0, b.0), rg))
    }

    /// Elementwise sum with row/column broadcasting of size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.tracks(&[a.0]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let rg = self.tracks(&[a.0, b.0]);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.transpose();
        let rg = self.tracks(&[a.0]);
        self.push(value, Op::Transpose(a.0), rg)
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let rg = self.tracks(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.tracks(&[a.0]);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    /// Euclidean norm of each column as a `1 × cols` row.
    pub fn col_norm(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.col_norms();
        let rg = self.tracks(&[a.0]);
        self.push(value, Op::ColNorm(a.0), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if start > end || end > t.cols() {
            return Err(AutodiffError::BadArgument {
                op: "slice_cols",
                message: format!("range {start}..{end} outside {} columns", t.cols()),
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(t.rows() * w);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let value = Tensor::new(t.rows(), w, data)?;
        let rg = self.tracks(&[a.0]);
        Ok(self.push(value, Op::SliceCols { src: a.0, start }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if start > end || end > t.rows() {
            return Err(AutodiffError::BadArgument {
                op: "slice_rows",
                message: format!("range {start}..{end} outside {} rows", t.rows()),
            });
        }
        let data = t.data()[start * t.cols()..end * t.cols()].to_vec();
        let value = Tensor::new(end - start, t.cols(), data)?;
        let rg = self.tracks(&[a.0]);
        Ok(self.push(value, Op::SliceRows { src: a.0, start }, rg))
    }

    /// Joins tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = parts.first().map_or(0, |p| self.shape(*p)[0]);
        for p in parts {
            if self.shape(*p)[0] != rows {
                return Err(AutodiffError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]),
                    rhs: self.shape(*p),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row_slice(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.tracks(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), rg))
    }

    /// Stacks tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let cols = parts.first().map_or(0, |p| self.shape(*p)[1]);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if self.shape(*p)[1] != cols {
                return Err(AutodiffError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]),
                    rhs: self.shape(*p),
                });
            }
            rows += self.shape(*p)[0];
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.tracks(&ids);
        Ok(self.push(value, Op::ConcatRows(ids), rg))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let t = &self.nodes[a.0].value;
        if rows * cols != t.len() {
            return Err(AutodiffError::Shape {
                op: "reshape",
                lhs: t.shape(),
                rhs: [rows, cols],
            });
        }
        let value = Tensor::new(rows, cols, t.data().to_vec())?;
        let rg = self.tracks(&[a.0]);
        Ok(self.push(value, Op::Reshape(a.0), rg))
    }

    /// Stacks `times` copies of `a` vertically.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let t = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(t.len() * times);
        for _ in 0..times {
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(t.rows() * times, t.cols(), data).expect("length matches");
        let rg = self.tracks(&[a.0]);
        self.push(value, Op::RepeatRows { src: a.0, times }, rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `1 × cols` affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let [rows, cols] = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != [1, cols] {
                return Err(AutodiffError::Shape {
                    op: "layer_norm",
                    lhs: [rows, cols],
                    rhs: self.shape(p),
                });
            }
        }
        let xv = self.nodes[x.0].value.data();
        let (g, b) = (self.nodes[gamma.0].value.data(), self.nodes[beta.0].value.data());
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(rows, cols, out)?;
        let rg = self.tracks(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Scaled dot-product self-attention over `batch` sequences stacked by rows,
    /// with the model dimension split into `heads` contiguous column blocks.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
    ) -> Result<Var, AutodiffError> {
        let [rows, d] = self.shape(q);
        for other in [k, v] {
            if self.shape(other) != [rows, d] {
                return Err(AutodiffError::Shape {
                    op: "attention",
                    lhs: [rows, d],
                    rhs: self.shape(other),
                });
            }
        }
        if batch == 0 || rows % batch != 0 || heads == 0 || d % heads != 0 {
            return Err(AutodiffError::BadArgument {
                op: "attention",
                message: format!("{rows}x{d} input cannot split into {batch} sequences and {heads} heads"),
            });
        }
        let t = rows / batch;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.nodes[q.0].value.data(),
            self.nodes[k.0].value.data(),
            self.nodes[v.0].value.data(),
        );
        let mut probs = vec![0.0; batch * heads * t * t];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                for i in 0..t {
                    let qi = &qd[(b * t + i) * d + h * dh..(b * t + i) * d + (h + 1) * dh];
                    let row = &mut p[i * t..(i + 1) * t];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kd[(b * t + j) * d + h * dh..(b * t + j) * d + (h + 1) * dh];
                        *s = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                        max = max.max(*s);
                    }
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= z;
                    }
                    let o = &mut out[(b * t + i) * d + h * dh..(b * t + i) * d + (h + 1) * dh];
                    for (j, &pij) in row.iter().enumerate() {
                        let vj = &vd[(b * t + j) * d + h * dh..(b * t + j) * d + (h + 1) * dh];
                        for (x, y) in o.iter_mut().zip(vj) {
                            *x += pij * y;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(rows, d, out)?;
        let rg = self.tracks(&[q.0, k.0, v.0]);
        Ok(self.push(
            value,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                batch,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar loss, storing gradients on every tracking node.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss { shape });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (n, g) in self.nodes.iter_mut().zip(grads) {
            if n.requires_grad {
                n.grad = g;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let gd = g.data();
        let out_shape = g.shape();
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[j].requires_grad {
                return;
            }
            let slot = grads[j].get_or_insert_with(|| {
                let [r, c] = nodes[j].value.shape();
                Tensor::zeros(r, c)
            });
            f(slot.data_mut());
        };
        let broadcast_acc = |dst: &mut [f64], s: [usize; 2], f: &dyn Fn(usize, usize, usize) -> f64| {
            let [rows, cols] = out_shape;
            if s == out_shape {
                for (idx, d) in dst.iter_mut().enumerate() {
                    *d += f(idx, idx / cols, idx % cols);
                }
            } else {
                for r in 0..rows {
                    for c in 0..cols {
                        dst[bidx(s, r, c)] += f(r * cols + c, r, c);
                    }
                }
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
                acc(a, &mut |d| broadcast_acc(d, sa, &|o, _, _| gd[o]));
                acc(b, &mut |d| broadcast_acc(d, sb, &|o, _, _| sign * gd[o]));
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a].value, &nodes[b].value);
                let (sa, sb) = (ta.shape(), tb.shape());
                acc(a, &mut |d| broadcast_acc(d, sa, &|o, r, c| gd[o] * tb.data()[bidx(sb, r, c)]));
                acc(b, &mut |d| broadcast_acc(d, sb, &|o, r, c| gd[o] * ta.data()[bidx(sa, r, c)]));
            }
            &Op::Div(a, b) => {
                let (ta, tb) = (&nodes[a].value, &nodes[b].value);
                let (sa, sb) = (ta.shape(), tb.shape());
                acc(a, &mut |d| broadcast_acc(d, sa, &|o, r, c| gd[o] / tb.data()[bidx(sb, r, c)]));
                acc(b, &mut |d| {
                    broadcast_acc(d, sb, &|o, r, c| {
                        let y = tb.data()[bidx(sb, r, c)];
                        -gd[o] * ta.data()[bidx(sa, r, c)] / (y * y)
                    })
                });
            }
            &Op::Scale(a, c) => acc(a, &mut |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x += c * y)),
            &Op::AddScalar(a) | &Op::Reshape(a) => {
                acc(a, &mut |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y))
            }
            &Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a].value, &nodes[b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(a, &mut |d| matmul_nt_into(gd, tb.data(), d, m, n, k));
                acc(b, &mut |d| matmul_tn_into(ta.data(), gd, d, m, k, n));
            }
            &Op::Transpose(a) => {
                let gt = g.transpose();
                acc(a, &mut |d| d.iter_mut().zip(gt.data()).for_each(|(x, y)| *x += y));
            }
            &Op::Relu(a) => {
                let x = nodes[a].value.data();
                acc(a, &mut |d| {
                    for ((dd, &xx), &gg) in d.iter_mut().zip(x).zip(gd) {
                        if xx > 0.0 {
                            *dd += gg;
                        }
                    }
                })
            }
            &Op::Square(a) => {
                let x = nodes[a].value.data();
                acc(a, &mut |d| {
                    for ((dd, &xx), &gg) in d.iter_mut().zip(x).zip(gd) {
                        *dd += 2.0 * xx * gg;
                    }
                })
            }
            &Op::Abs(a) => {
                let x = nodes[a].value.data();
                acc(a, &mut |d| {
                    for ((dd, &xx), &gg) in d.iter_mut().zip(x).zip(gd) {
                        if xx != 0.0 {
                            *dd += xx.signum() * gg;
                        }
                    }
                })
            }
            &Op::Sum(a) => acc(a, &mut |d| d.iter_mut().for_each(|x| *x += gd[0])),
            &Op::Mean(a) => {
                let n = nodes[a].value.len() as f64;
                acc(a, &mut |d| d.iter_mut().for_each(|x| *x += gd[0] / n))
            }
            &Op::ColNorm(a) => {
                let x = &nodes[a].value;
                let norms = nodes[i].value.data();
                let cols = x.cols();
                acc(a, &mut |d| {
                    for (idx, dd) in d.iter_mut().enumerate() {
                        let c = idx % cols;
                        if norms[c] > 0.0 {
                            *dd += gd[c] * x.data()[idx] / norms[c];
                        }
                    }
                })
            }
            &Op::SliceCols { src, start } => {
                let src_cols = nodes[src].value.cols();
                let [rows, w] = out_shape;
                acc(src, &mut |d| {
                    for r in 0..rows {
                        for c in 0..w {
                            d[r * src_cols + start + c] += gd[r * w + c];
                        }
                    }
                })
            }
            &Op::SliceRows { src, start } => {
                let cols = out_shape[1];
                acc(src, &mut |d| {
                    let dst = &mut d[start * cols..start * cols + gd.len()];
                    dst.iter_mut().zip(gd).for_each(|(x, y)| *x += y)
                })
            }
            Op::ConcatCols(parts) => {
                let total = out_shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].value.cols();
                    acc(p, &mut |d| {
                        for r in 0..out_shape[0] {
                            for c in 0..w {
                                d[r * w + c] += gd[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    acc(p, &mut |d| d.iter_mut().zip(&gd[offset..offset + len]).for_each(|(x, y)| *x += y));
                    offset += len;
                }
            }
            &Op::RepeatRows { src, times } => {
                let len = nodes[src].value.len();
                acc(src, &mut |d| {
                    for t in 0..times {
                        d.iter_mut().zip(&gd[t * len..(t + 1) * len]).for_each(|(x, y)| *x += y);
                    }
                })
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [rows, cols] = out_shape;
                let gam = nodes[*gamma].value.data();
                acc(*gamma, &mut |d| {
                    for (idx, &gg) in gd.iter().enumerate() {
                        d[idx % cols] += gg * xhat[idx];
                    }
                });
                acc(*beta, &mut |d| {
                    for (idx, &gg) in gd.iter().enumerate() {
                        d[idx % cols] += gg;
                    }
                });
                acc(*x, &mut |d| {
                    let n = cols as f64;
                    for r in 0..rows {
                        let base = r * cols;
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for c in 0..cols {
                            let gh = gd[base + c] * gam[c];
                            sum_g += gh;
                            sum_gx += gh * xhat[base + c];
                        }
                        for c in 0..cols {
                            let gh = gd[base + c] * gam[c];
                            d[base + c] += inv_std[r] / n * (n * gh - sum_g - xhat[base + c] * sum_gx);
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            } => {
                let (batch, heads) = (*batch, *heads);
                let [rows, d] = out_shape;
                let t = rows / batch;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (nodes[*q].value.data(), nodes[*k].value.data(), nodes[*v].value.data());
                let mut dq = vec![0.0; rows * d];
                let mut dk = vec![0.0; rows * d];
                let mut dv = vec![0.0; rows * d];
                let mut ds = vec![0.0; t];
                for b in 0..batch {
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                        let at = |i: usize| (b * t + i) * d + h * dh;
                        for i in 0..t {
                            let go = &gd[at(i)..at(i) + dh];
                            // dP_ij = dO_i · V_j; dV_j += P_ij dO_i
                            let mut dot = 0.0;
                            for j in 0..t {
                                let vj = &vd[at(j)..at(j) + dh];
                                let dp = go.iter().zip(vj).map(|(x, y)| x * y).sum::<f64>();
                                ds[j] = dp;
                                dot += dp * p[i * t + j];
                                let pij = p[i * t + j];
                                for (x, y) in dv[at(j)..at(j) + dh].iter_mut().zip(go) {
                                    *x += pij * y;
                                }
                            }
                            for j in 0..t {
                                let s = p[i * t + j] * (ds[j] - dot) * scale;
                                if s == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[at(i) + c] += s * kd[at(j) + c];
                                    dk[at(j) + c] += s * qd[at(i) + c];
                                }
                            }
                        }
                    }
                }
                acc(*q, &mut |dst| dst.iter_mut().zip(&dq).for_each(|(x, y)| *x += y));
                acc(*k, &mut |dst| dst.iter_mut().zip(&dk).for_each(|(x, y)| *x += y));
                acc(*v, &mut |dst| dst.iter_mut().zip(&dv).for_each(|(x, y)| *x += y));
            }
        }
    }
}
