//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse and applies each op's vector-Jacobian product.
//! Node values are immutable once recorded. Parameter leaves borrow their
//! values from a [`ParamStore`] and receive gradients through [`Backprop`].

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Additive offset applied to masked logits before a softmax.
pub const MASK_OFFSET: f64 = -1e30;

static EMPTY_STORE: ParamStore = ParamStore::new();

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
    MaskFill(Var),
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
    SumAxis(Var, usize),
    Frobenius(Var),
    Gather(Var, Vec<usize>),
    PairSum(Var, Var),
    GroupedWeightedSum(Var, Var),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("expected a matrix, got shape {:?}", t.shape()),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(1024),
        }
    }

    /// A graph with no parameters; every leaf is a constant input.
    pub fn detached() -> Graph<'static> {
        Graph::new(&EMPTY_STORE)
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds `bias` (length equal to the last axis of `a`) to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let c = *ta.shape().last().unwrap_or(&1);
        if tb.len() != c {
            return Err(mismatch("add_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(a))
    }

    /// Concatenation of matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat_cols",
                detail: "nothing to concatenate".into(),
            });
        }
        let rows = require_matrix("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = require_matrix("concat_cols", t)?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat_rows",
                detail: "nothing to concatenate".into(),
            });
        }
        let cols = require_matrix("concat_rows", self.value(parts[0]))?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = require_matrix("concat_rows", t)?;
            if c != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            data.extend_from_slice(t.data());
            rows += r;
        }
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = require_matrix("slice_rows", ta)?;
        if start + len > r {
            return Err(Error::InvalidShape {
                op: "slice_rows",
                detail: format!("rows {}..{} out of {}", start, start + len, r),
            });
        }
        let data = ta.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = require_matrix("transpose", ta)?;
        let src = ta.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Adds [`MASK_OFFSET`] to every entry whose mask is false. The mask has
    /// one entry per element, or one per column (broadcast over rows).
    pub fn mask_fill(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let ta = self.value(a);
        let mut data = ta.data().to_vec();
        let cols = broadcast_mask("mask_fill", ta, mask)?;
        for (i, x) in data.iter_mut().enumerate() {
            if !mask_at(mask, cols, i) {
                *x += MASK_OFFSET;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MaskFill(a)))
    }

    /// Row-wise softmax over the unmasked entries; masked entries are exactly
    /// zero. The mask is per element or per column, `None` for no masking.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = require_matrix("softmax_rows", ta)?;
        let all = vec![true; c];
        let mask = mask.unwrap_or(&all);
        let mcols = broadcast_mask("softmax_rows", ta, mask)?;
        let src = ta.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let keep = |j: usize| mask_at(mask, mcols, i * c + j);
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                if keep(j) {
                    max = max.max(src[i * c + j]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMasked { row: i });
            }
            let mut total = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (src[i * c + j] - max).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= total;
            }
        }
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::SoftmaxRows(a)))
    }

    /// `−log softmax(logits)[target]` over all entries of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let tl = self.value(logits);
        let classes = tl.len();
        if target >= classes {
            return Err(Error::TargetOutOfRange { target, classes });
        }
        let max = tl.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = tl.data().iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - tl.data()[target];
        let probs = exps.into_iter().map(|e| e / total).collect();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Sums a matrix along `axis` (0: down the rows → 1×c, 1: across → r×1).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = require_matrix("sum_axis", ta)?;
        let t = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for row in ta.data().chunks(c) {
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                Tensor::new(vec![1, c], out)?
            }
            1 => Tensor::new(vec![r, 1], ta.data().chunks(c).map(|row| row.iter().sum()).collect())?,
            _ => {
                return Err(Error::InvalidShape {
                    op: "sum_axis",
                    detail: format!("axis {axis} of a matrix"),
                })
            }
        };
        Ok(self.push(t, Op::SumAxis(a, axis)))
    }

    pub fn frobenius(&mut self, a: Var) -> Var {
        let n = self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Tensor::scalar(n), Op::Frobenius(a))
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, e) = require_matrix("gather", tt)?;
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { id, vocab: v });
            }
            data.extend_from_slice(tt.row(id));
        }
        Ok(self.push(Tensor::new(vec![ids.len(), e], data)?, Op::Gather(table, ids.to_vec())))
    }

    /// All ordered row pairs: `out[i·m + j] = a[i] + b[j]` for `a: n×d`, `b: m×d`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, d) = require_matrix("pair_sum", ta)?;
        let (m, d2) = require_matrix("pair_sum", tb)?;
        if d != d2 {
            return Err(mismatch("pair_sum", ta, tb));
        }
        let mut data = Vec::with_capacity(n * m * d);
        for i in 0..n {
            let ra = ta.row(i);
            for j in 0..m {
                data.extend(ra.iter().zip(tb.row(j)).map(|(x, y)| x + y));
            }
        }
        Ok(self.push(Tensor::new(vec![n * m, d], data)?, Op::PairSum(a, b)))
    }

    /// `out[i] = Σ_j w[i, j] · v[i·m + j]` for `w: n×m`, `v: (n·m)×d`.
    pub fn grouped_weighted_sum(&mut self, w: Var, v: Var) -> Result<Var> {
        let (tw, tv) = (self.value(w), self.value(v));
        let (n, m) = require_matrix("grouped_weighted_sum", tw)?;
        let (nm, d) = require_matrix("grouped_weighted_sum", tv)?;
        if nm != n * m {
            return Err(mismatch("grouped_weighted_sum", tw, tv));
        }
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let out = &mut data[i * d..(i + 1) * d];
            for j in 0..m {
                let wij = tw.data()[i * m + j];
                for (o, x) in out.iter_mut().zip(tv.row(i * m + j)) {
                    *o += wij * x;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, d], data)?, Op::GroupedWeightedSum(w, v)))
    }

    /// Reverse-mode pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backprop> {
        let tl = self.value(loss);
        if !tl.is_scalar() {
            return Err(Error::NotScalar(tl.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Gradients::zeros_like(self.store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.apply_vjp(idx, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Ok(Backprop { nodes: grads, params })
    }

    fn apply_vjp(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], params: &mut Gradients) {
        let node = &self.nodes[idx];
        let out = match &node.value {
            Value::Owned(t) => t,
            Value::Param(_) => self.value(Var(idx)),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                for (a, b) in params.grads[id.0].data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                gemm_nt_acc(g, tb.data(), slot(grads, *a, m * k), m, k, n);
                gemm_tn_acc(ta.data(), g, slot(grads, *b, k * n), m, k, n);
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                for (x, y) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                    *x -= y;
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                for ((x, gv), bv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(tb) {
                    *x += gv * bv;
                }
                for ((x, gv), av) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(ta) {
                    *x += gv * av;
                }
            }
            Op::AddBias(a, bias) => {
                add_into(slot(grads, *a, g.len()), g);
                let c = self.value(*bias).len();
                let gb = slot(grads, *bias, c);
                for row in g.chunks(c) {
                    add_into(gb, row);
                }
            }
            Op::Scale(a, f) => {
                for (x, gv) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                    *x += gv * f;
                }
            }
            Op::Tanh(a) => {
                for ((x, gv), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(out.data()) {
                    *x += gv * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                for ((x, gv), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *x += gv;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.shape()[0];
                let total = out.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).shape()[1];
                    let gp = slot(grads, *p, rows * w);
                    for r in 0..rows {
                        add_into(
                            &mut gp[r * w..(r + 1) * w],
                            &g[r * total + offset..r * total + offset + w],
                        );
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    add_into(slot(grads, *p, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let ta = self.value(*a);
                let c = ta.shape()[1];
                let ga = slot(grads, *a, ta.len());
                add_into(&mut ga[start * c..start * c + g.len()], g);
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::Reshape(a) | Op::MaskFill(a) => add_into(slot(grads, *a, g.len()), g),
            Op::SoftmaxRows(a) => {
                let c = out.shape()[1];
                let ga = slot(grads, *a, g.len());
                for ((grow, yrow), garow) in g.chunks(c).zip(out.data().chunks(c)).zip(ga.chunks_mut(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    for ((gi, yi), o) in grow.iter().zip(yrow).zip(garow) {
                        *o += yi * (gi - dot);
                    }
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                let gl = slot(grads, *logits, probs.len());
                for (i, (x, p)) in gl.iter_mut().zip(probs).enumerate() {
                    let onehot = if i == *target { 1.0 } else { 0.0 };
                    *x += g[0] * (p - onehot);
                }
            }
            Op::Sum(a) => {
                for x in slot(grads, *a, self.value(*a).len()) {
                    *x += g[0];
                }
            }
            Op::SumAxis(a, axis) => {
                let ta = self.value(*a);
                let (r, c) = (ta.shape()[0], ta.shape()[1]);
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += if *axis == 0 { g[j] } else { g[i] };
                    }
                }
            }
            Op::Frobenius(a) => {
                let norm = out.item();
                if norm > 0.0 {
                    let ta = self.value(*a).data();
                    for (x, v) in slot(grads, *a, ta.len()).iter_mut().zip(ta) {
                        *x += g[0] * v / norm;
                    }
                }
            }
            Op::Gather(table, ids) => {
                let tt = self.value(*table);
                let e = tt.shape()[1];
                let gt = slot(grads, *table, tt.len());
                for (i, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * e..(id + 1) * e], &g[i * e..(i + 1) * e]);
                }
            }
            Op::PairSum(a, b) => {
                let (n, d) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let m = self.value(*b).shape()[0];
                {
                    let ga = slot(grads, *a, n * d);
                    for i in 0..n {
                        for j in 0..m {
                            add_into(&mut ga[i * d..(i + 1) * d], &g[(i * m + j) * d..(i * m + j + 1) * d]);
                        }
                    }
                }
                let gb = slot(grads, *b, m * d);
                for i in 0..n {
                    for j in 0..m {
                        add_into(&mut gb[j * d..(j + 1) * d], &g[(i * m + j) * d..(i * m + j + 1) * d]);
                    }
                }
            }
            Op::GroupedWeightedSum(w, v) => {
                let (tw, tv) = (self.value(*w), self.value(*v));
                let (n, m) = (tw.shape()[0], tw.shape()[1]);
                let d = tv.shape()[1];
                {
                    let gw = slot(grads, *w, n * m);
                    for i in 0..n {
                        let gi = &g[i * d..(i + 1) * d];
                        for j in 0..m {
                            gw[i * m + j] += gi.iter().zip(tv.row(i * m + j)).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                let gv = slot(grads, *v, n * m * d);
                for i in 0..n {
                    let gi = &g[i * d..(i + 1) * d];
                    for j in 0..m {
                        let wij = tw.data()[i * m + j];
                        for (x, y) in gv[(i * m + j) * d..(i * m + j + 1) * d].iter_mut().zip(gi) {
                            *x += wij * y;
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn broadcast_mask(op: &'static str, t: &Tensor, mask: &[bool]) -> Result<usize> {
    let cols = *t.shape().last().unwrap_or(&1);
    if mask.len() == t.len() || mask.len() == cols {
        Ok(if mask.len() == t.len() { 0 } else { cols })
    } else {
        Err(Error::InvalidShape {
            op,
            detail: format!("mask of length {} for shape {:?}", mask.len(), t.shape()),
        })
    }
}

/// `cols == 0` means the mask is per element.
fn mask_at(mask: &[bool], cols: usize, flat: usize) -> bool {
    if cols == 0 {
        mask[flat]
    } else {
        mask[flat % cols]
    }
}

/// Result of [`Graph::backward`].
pub struct Backprop {
    nodes: Vec<Option<Vec<f64>>>,
    params: Gradients,
}

impl Backprop {
    /// Gradient of the loss with respect to any recorded node; zeros when
    /// the node does not influence the loss.
    pub fn wrt(&self, graph: &Graph<'_>, v: Var) -> Tensor {
        let shape = graph.shape(v).to_vec();
        match &self.nodes[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        self.params.get(id)
    }

    pub fn gradients(&self) -> &Gradients {
        &self.params
    }

    pub fn into_gradients(self) -> Gradients {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_times_b() {
        let mut g = Graph::detached();
        let i = g.input(Tensor::identity(2));
        let b = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c), g.value(b));
    }

    #[test]
    fn one_by_one_product() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::scalar(2.0));
        let b = g.input(Tensor::scalar(3.0));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).item(), 6.0);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_analytic() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::row_vector(vec![0.0, 0.0, 0.0]));
        let s = g.softmax_rows(a, None).unwrap();
        for v in g.value(s).data() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
        let b = g.input(Tensor::row_vector(vec![0.0, 2f64.ln()]));
        let s = g.softmax_rows(b, None).unwrap();
        assert!(close(g.value(s).data()[0], 1.0 / 3.0, 1e-15));
        assert!(close(g.value(s).data()[1], 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn softmax_masked_entry_is_zero() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::row_vector(vec![5.0, 7.0, 1.0]));
        let s = g.softmax_rows(a, Some(&[true, false, true])).unwrap();
        let y = g.value(s).data();
        // direct exp/sum over the two unmasked logits
        let denom = 5f64.exp() + 1f64.exp();
        assert_eq!(y[1], 0.0);
        assert!(close(y[0], 5f64.exp() / denom, 1e-15));
        assert!(close(y[2], 1f64.exp() / denom, 1e-15));
        assert!(close(y[0], 0.982, 1e-3));
        assert!(close(y[2], 0.018, 1e-3));
    }

    #[test]
    fn softmax_rejects_fully_masked_row() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::zeros(&[2, 2]));
        let err = g.softmax_rows(a, Some(&[true, true, false, false])).unwrap_err();
        assert!(matches!(err, Error::FullyMasked { row: 1 }));
    }

    #[test]
    fn cross_entropy_cases() {
        let mut g = Graph::detached();
        let l = 9;
        let a = g.input(Tensor::row_vector(vec![0.3; l]));
        let ce = g.cross_entropy(a, 4).unwrap();
        assert!(close(g.value(ce).item(), (l as f64).ln(), 1e-12));

        let mut logits = vec![0.0; 5];
        logits[2] = 20.0;
        let b = g.input(Tensor::row_vector(logits));
        let ce = g.cross_entropy(b, 2).unwrap();
        assert!(g.value(ce).item() < 1e-8);

        assert!(matches!(
            g.cross_entropy(b, 5),
            Err(Error::TargetOutOfRange { target: 5, classes: 5 })
        ));
    }

    #[test]
    fn concat_and_frobenius() {
        let mut g = Graph::detached();
        let parts: Vec<Var> = (0..3).map(|_| g.input(Tensor::zeros(&[4, 2]))).collect();
        let c = g.concat_cols(&parts).unwrap();
        assert_eq!(g.shape(c), &[4, 6]);
        let m = g.input(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let f = g.frobenius(m);
        assert!(close(g.value(f).item(), 2f64.sqrt(), 1e-15));
        let t = g.tanh(parts[0]);
        assert!(g.value(t).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut store = ParamStore::new();
        let w = store.add("test", "w", Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap());
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let s = g.sum(wv);
        let bp = g.backward(s).unwrap();
        assert_eq!(bp.param(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_squared_norm() {
        let mut store = ParamStore::new();
        let w = store.add("test", "w", Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let n = g.frobenius(wv);
        let sq = g.mul(n, n).unwrap();
        let bp = g.backward(sq).unwrap();
        assert!(close(bp.param(w).data()[0], 6.0, 1e-12));
        assert!(close(bp.param(w).data()[1], 8.0, 1e-12));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(a), Err(Error::NotScalar(_))));
    }

    #[test]
    fn unreachable_param_has_zero_grad() {
        let mut store = ParamStore::new();
        let w = store.add("test", "w", Tensor::scalar(2.0));
        let u = store.add("test", "u", Tensor::zeros(&[2, 2]));
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let _uv = g.param(u);
        let s = g.sum(wv);
        let bp = g.backward(s).unwrap();
        assert_eq!(bp.param(u).data(), &[0.0; 4]);
    }

    #[test]
    fn pair_sum_layout() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = g.input(Tensor::from_rows(&[vec![10.0], vec![20.0], vec![30.0]]).unwrap());
        let p = g.pair_sum(a, b).unwrap();
        assert_eq!(g.value(p).data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut g = Graph::detached();
        let t = g.input(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            g.gather(t, &[0, 3]),
            Err(Error::TokenOutOfRange { id: 3, vocab: 3 })
        ));
    }
}
