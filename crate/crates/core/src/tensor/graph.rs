//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in creation order, which is a topological order of the
//! computation, so the backward pass is a single reverse sweep over the tape.

use std::sync::Arc;

use super::kernels::{self, bilinear_taps};
use super::value::Tensor;
use crate::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse linear map from input rows to output rows.
///
/// Output row `o` is `Σ weight[e] · input[src[e]]` over
/// `e ∈ offsets[o]..offsets[o+1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatherPlan<T> {
    pub in_rows: usize,
    pub offsets: Vec<usize>,
    pub src: Vec<usize>,
    pub weight: Vec<T>,
}

impl<T: Scalar> GatherPlan<T> {
    pub fn builder(in_rows: usize) -> GatherPlanBuilder<T> {
        GatherPlanBuilder {
            plan: GatherPlan { in_rows, offsets: vec![0], src: Vec::new(), weight: Vec::new() },
        }
    }

    pub fn out_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entries(&self, out_row: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.offsets[out_row]..self.offsets[out_row + 1];
        self.src[r.clone()].iter().copied().zip(self.weight[r].iter().copied())
    }
}

pub struct GatherPlanBuilder<T> {
    plan: GatherPlan<T>,
}

impl<T: Scalar> GatherPlanBuilder<T> {
    pub fn push(&mut self, src: usize, weight: T) {
        assert!(src < self.plan.in_rows, "gather source row {src} out of range");
        self.plan.src.push(src);
        self.plan.weight.push(weight);
    }

    pub fn end_row(&mut self) {
        self.plan.offsets.push(self.plan.src.len());
    }

    pub fn build(self) -> GatherPlan<T> {
        self.plan
    }
}

/// Focal cross-entropy settings for [`Graph::focal`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalSpec {
    pub gamma: f64,
    pub alpha: f64,
    /// Rows labelled with this class are weighted by `1 - alpha`, others by `alpha`.
    /// Without a background class every row is weighted by `alpha`.
    pub background: Option<usize>,
}

impl Default for FocalSpec {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25, background: None }
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    SparseGather(Var, Arc<GatherPlan<T>>),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    GridSample { feature: Var, points: Var },
    GroupedAttention { q: Var, k: Var, v: Var, heads: usize, group: usize, weights: Vec<T>, scale: T },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    L1(Var, Var),
    Kl(Var, Var),
    Focal { logits: Var, labels: Arc<Vec<usize>>, spec: FocalSpec },
    RowCosine { a: Var, b: Var, eps: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording tape. Single writer; values are immutable once recorded.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Record an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.row_len())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape(), data);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p - q).collect();
        let value = Tensor::new(x.shape(), data);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(x.shape(), data);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// `x[i, :] + row[:]` for every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (_, w) = self.dims2(x);
        assert_eq!(self.value(row).numel(), w, "add_row: row length mismatch");
        let (xt, r) = (self.value(x), self.value(row));
        let mut data = xt.data().to_vec();
        if w > 0 {
            for chunk in data.chunks_exact_mut(w) {
                for (d, &b) in chunk.iter_mut().zip(r.data()) {
                    *d += b;
                }
            }
        }
        let value = Tensor::new(xt.shape(), data);
        self.push(value, Op::AddRow(x, row), &[x, row])
    }

    /// `x[i, :] ⊙ row[:]` for every row of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (_, w) = self.dims2(x);
        assert_eq!(self.value(row).numel(), w, "mul_row: row length mismatch");
        let (xt, r) = (self.value(x), self.value(row));
        let mut data = xt.data().to_vec();
        if w > 0 {
            for chunk in data.chunks_exact_mut(w) {
                for (d, &g) in chunk.iter_mut().zip(r.data()) {
                    *d *= g;
                }
            }
        }
        let value = Tensor::new(xt.shape(), data);
        self.push(value, Op::MulRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let xt = self.value(x);
        let value = Tensor::new(xt.shape(), xt.data().iter().map(|&v| v * s).collect());
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul expects 2-D operands, got {sa:?} and {sb:?}");
        assert_eq!(sa[1], sb[0], "matmul: inner dimensions {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::new([m, n], out), Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        assert_eq!(s.len(), 2, "transpose expects a 2-D tensor");
        let (m, n) = (s[0], s[1]);
        let out = kernels::transpose(self.value(a).data(), m, n);
        self.push(Tensor::new([n, m], out), Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let value = self.value(a).clone().reshaped(shape);
        self.push(value, Op::Reshape(a), &[a])
    }

    /// Stack along the leading axis; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(&t.shape()[1..], &tail[..], "concat_rows: trailing shape mismatch");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(Tensor::new(shape, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows(), "slice_rows out of range");
        let w = t.row_len();
        let data = t.data()[start * w..(start + len) * w].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        self.push(Tensor::new(shape, data), Op::SliceRows(a, start), &[a])
    }

    /// Side-by-side concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert!(s.len() == 2 && s[0] == rows, "concat_cols: incompatible shape {s:?}");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor::new([rows, total], data), Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let s = self.shape(a);
        assert!(s.len() == 2 && start + len <= s[1], "slice_cols out of range");
        let (rows, w) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * w + start..r * w + start + len]);
        }
        self.push(Tensor::new([rows, len], data), Op::SliceCols(a, start), &[a])
    }

    /// Select rows (with repetition allowed) along the leading axis.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let t = self.value(a);
        let w = t.row_len();
        let mut data = Vec::with_capacity(index.len() * w);
        for &i in index {
            assert!(i < t.rows(), "gather_rows index {i} out of range");
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = index.len();
        self.push(Tensor::new(shape, data), Op::GatherRows(a, Arc::new(index.to_vec())), &[a])
    }

    /// Apply a constant sparse row map; output has shape `[plan.out_rows(), row_len]`.
    pub fn sparse_gather(&mut self, a: Var, plan: Arc<GatherPlan<T>>) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), plan.in_rows, "sparse_gather: input rows mismatch");
        let w = t.row_len();
        let mut data = vec![T::zero(); plan.out_rows() * w];
        for o in 0..plan.out_rows() {
            let out = &mut data[o * w..(o + 1) * w];
            for (s, wt) in plan.entries(o) {
                kernels::axpy(wt, t.row(s), out);
            }
        }
        self.push(Tensor::new([plan.out_rows(), w], data), Op::SparseGather(a, plan), &[a])
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect());
        self.push(value, op, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, kernels::gelu, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let w = t.row_len();
        let mut data = t.data().to_vec();
        if w > 0 {
            for row in data.chunks_exact_mut(w) {
                kernels::softmax_in_place(row);
            }
        }
        let value = Tensor::new(t.shape(), data);
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Per-row normalization to zero mean and unit variance, then `⊙ gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let t = self.value(x);
        let (rows, w) = (t.rows(), t.row_len());
        assert_eq!(self.value(gain).numel(), w, "layer_norm gain length");
        assert_eq!(self.value(bias).numel(), w, "layer_norm bias length");
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let wn = T::of_usize(w);
        let mut xhat = Vec::with_capacity(rows * w);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().copied().sum::<T>() / wn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wn;
            let rs = T::one() / (var + T::of(eps)).sqrt();
            rstd.push(rs);
            for j in 0..w {
                let xh = (row[j] - mean) * rs;
                xhat.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let value = Tensor::new(t.shape(), out);
        self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    /// Bilinear sampling of `feature` (`H×W×C`) at `points` (`M×2`, columns `x, y`
    /// in cell coordinates). Out-of-range coordinates are clamped to the border.
    pub fn grid_sample(&mut self, feature: Var, points: Var) -> Var {
        let fs = self.shape(feature).to_vec();
        assert_eq!(fs.len(), 3, "grid_sample feature must be H×W×C, got {fs:?}");
        let ps = self.shape(points).to_vec();
        assert!(ps.len() == 2 && ps[1] == 2, "grid_sample points must be M×2, got {ps:?}");
        let (h, w, c) = (fs[0], fs[1], fs[2]);
        let m = ps[0];
        let f = self.value(feature).data();
        let p = self.value(points).data();
        let mut out = vec![T::zero(); m * c];
        for i in 0..m {
            let taps = bilinear_taps(p[2 * i], p[2 * i + 1], h, w);
            let o = &mut out[i * c..(i + 1) * c];
            for (&cell, &wt) in taps.cells.iter().zip(&taps.weights) {
                kernels::axpy(wt, &f[cell * c..(cell + 1) * c], o);
            }
        }
        self.push(Tensor::new([m, c], out), Op::GridSample { feature, points }, &[feature, points])
    }

    /// Multi-head attention where query `i` attends only to its own group of
    /// keys. `k` and `v` hold `q_rows · heads · group` rows ordered
    /// `(query, head, member)`; head `h` reads channel block `h` of every row.
    pub fn grouped_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, group: usize) -> Var {
        let (nq, c) = self.dims2(q);
        assert!(heads > 0 && c % heads == 0, "grouped_attention: {c} channels over {heads} heads");
        assert_eq!(self.shape(k), [nq * heads * group, c], "grouped_attention key shape");
        assert_eq!(self.shape(v), [nq * heads * group, c], "grouped_attention value shape");
        let d = c / heads;
        let scale = T::one() / T::of_usize(d).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut weights = vec![T::zero(); nq * heads * group];
        let mut out = vec![T::zero(); nq * c];
        for i in 0..nq {
            for h in 0..heads {
                let qh = &qd[i * c + h * d..i * c + (h + 1) * d];
                let base = (i * heads + h) * group;
                let wrow = &mut weights[base..base + group];
                for (r, wv) in wrow.iter_mut().enumerate() {
                    let row = base + r;
                    *wv = kernels::dot(qh, &kd[row * c + h * d..row * c + (h + 1) * d]) * scale;
                }
                kernels::softmax_in_place(wrow);
                let oh = &mut out[i * c + h * d..i * c + (h + 1) * d];
                for (r, &wv) in wrow.iter().enumerate() {
                    let row = base + r;
                    kernels::axpy(wv, &vd[row * c + h * d..row * c + (h + 1) * d], oh);
                }
            }
        }
        self.push(
            Tensor::new([nq, c], out),
            Op::GroupedAttention { q, k, v, heads, group, weights, scale },
            &[q, k, v],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(t.numel() > 0, "mean of an empty tensor");
        let s = t.data().iter().copied().sum::<T>() / T::of_usize(t.numel());
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mse");
        let (x, y) = (self.value(a).data(), self.value(b).data());
        assert!(!x.is_empty(), "mse of empty tensors");
        let s = x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>() / T::of_usize(x.len());
        self.push(Tensor::scalar(s), Op::Mse(a, b), &[a, b])
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "l1");
        let (x, y) = (self.value(a).data(), self.value(b).data());
        assert!(!x.is_empty(), "l1 of empty tensors");
        let s = x.iter().zip(y).map(|(&p, &q)| (p - q).abs()).sum::<T>() / T::of_usize(x.len());
        self.push(Tensor::scalar(s), Op::L1(a, b), &[a, b])
    }

    /// Mean over rows of `KL(a_row ‖ b_row)`; rows must be probability
    /// distributions.
    pub fn kl(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "kl");
        let (ta, tb) = (self.value(a), self.value(b));
        let (rows, w) = (ta.rows(), ta.row_len());
        assert!(rows > 0 && w > 0, "kl of empty tensors");
        let tol = 1e-6f64.max(8.0 * T::epsilon().as_f64() * w as f64);
        for r in 0..rows {
            for t in [ta, tb] {
                let s: f64 = t.row(r).iter().map(|x| x.as_f64()).sum();
                let nonneg = t.row(r).iter().all(|&x| x >= T::zero());
                assert!(nonneg && (s - 1.0).abs() <= tol, "kl: row {r} is not a distribution (sum {s})");
            }
        }
        let mut s = T::zero();
        for (&p, &q) in ta.data().iter().zip(tb.data()) {
            if p > T::zero() {
                s += p * (p.ln() - q.max(T::min_positive_value()).ln());
            }
        }
        let value = Tensor::scalar(s / T::of_usize(rows));
        self.push(value, Op::Kl(a, b), &[a, b])
    }

    /// Mean focal cross-entropy of row logits against integer labels.
    pub fn focal(&mut self, logits: Var, labels: &[usize], spec: FocalSpec) -> Var {
        let t = self.value(logits);
        let (rows, w) = (t.rows(), t.row_len());
        assert!(rows > 0, "focal of empty logits");
        assert_eq!(labels.len(), rows, "focal: one label per row");
        let mut total = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            assert!(y < w, "focal: label {y} out of range");
            let (logp, _) = log_softmax_at(t.row(r), y);
            let pt = logp.exp();
            let at = T::of(focal_alpha(&spec, y));
            total += -at * (T::one() - pt).powf(T::of(spec.gamma)) * logp;
        }
        let value = Tensor::scalar(total / T::of_usize(rows));
        self.push(value, Op::Focal { logits, labels: Arc::new(labels.to_vec()), spec }, &[logits])
    }

    /// Per-row cosine similarity of two `n×d` tensors, as a length-`n` vector.
    pub fn row_cosine(&mut self, a: Var, b: Var, eps: f64) -> Var {
        self.same_shape(a, b, "row_cosine");
        let (ta, tb) = (self.value(a), self.value(b));
        let eps = T::of(eps);
        let out: Vec<T> = (0..ta.rows())
            .map(|r| {
                let (x, y) = (ta.row(r), tb.row(r));
                let na = (kernels::dot(x, x) + eps).sqrt();
                let nb = (kernels::dot(y, y) + eps).sqrt();
                kernels::dot(x, y) / (na * nb)
            })
            .collect();
        let n = out.len();
        self.push(Tensor::new([n], out), Op::RowCosine { a, b, eps }, &[a, b])
    }

    /// Reverse sweep from a one-element root.
    ///
    /// A root that does not depend on any `requires_grad` leaf yields zero
    /// gradients everywhere.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert!(
            self.value(root).is_scalar(),
            "backward root must be a scalar, got shape {:?}",
            self.shape(root)
        );
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![T::one()]);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(), grads }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, self.value(*a).numel(), |d| add_into(d, g));
                }
                if needs(*b) {
                    accumulate(grads, *b, self.value(*b).numel(), |d| add_into(d, g));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.len(), |d| add_into(d, g));
                }
                if needs(*b) {
                    accumulate(grads, *b, g.len(), |d| {
                        for (x, &y) in d.iter_mut().zip(g) {
                            *x -= y;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    accumulate(grads, *a, g.len(), |d| {
                        for ((x, &gy), &o) in d.iter_mut().zip(g).zip(bv) {
                            *x += gy * o;
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, g.len(), |d| {
                        for ((x, &gy), &o) in d.iter_mut().zip(g).zip(av) {
                            *x += gy * o;
                        }
                    });
                }
            }
            Op::AddRow(x, row) => {
                let w = self.value(*row).numel();
                if needs(*x) {
                    accumulate(grads, *x, g.len(), |d| add_into(d, g));
                }
                if needs(*row) && w > 0 {
                    accumulate(grads, *row, w, |d| {
                        for gr in g.chunks_exact(w) {
                            add_into(d, gr);
                        }
                    });
                }
            }
            Op::MulRow(x, row) => {
                let w = self.value(*row).numel();
                let rv = self.value(*row).data();
                let xv = self.value(*x).data();
                if needs(*x) && w > 0 {
                    accumulate(grads, *x, g.len(), |d| {
                        for (dr, gr) in d.chunks_exact_mut(w).zip(g.chunks_exact(w)) {
                            for ((dv, &gv), &r) in dr.iter_mut().zip(gr).zip(rv) {
                                *dv += gv * r;
                            }
                        }
                    });
                }
                if needs(*row) && w > 0 {
                    accumulate(grads, *row, w, |d| {
                        for (gr, xr) in g.chunks_exact(w).zip(xv.chunks_exact(w)) {
                            for ((dv, &gv), &xv) in d.iter_mut().zip(gr).zip(xr) {
                                *dv += gv * xv;
                            }
                        }
                    });
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(grads, *x, g.len(), |d| kernels::axpy(s, g, d));
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let bt = kernels::transpose(self.value(*b).data(), k, n);
                    accumulate(grads, *a, m * k, |d| kernels::matmul_acc(g, &bt, d, m, n, k));
                }
                if needs(*b) {
                    let av = self.value(*a).data();
                    accumulate(grads, *b, k * n, |d| kernels::matmul_tn_acc(av, g, d, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (m, n) = (s[0], s[1]);
                let gt = kernels::transpose(g, n, m);
                accumulate(grads, *a, m * n, |d| add_into(d, &gt));
            }
            Op::Reshape(a) => accumulate(grads, *a, g.len(), |d| add_into(d, g)),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if needs(*p) {
                        accumulate(grads, *p, n, |d| add_into(d, &g[off..off + n]));
                    }
                    off += n;
                }
            }
            Op::SliceRows(a, start) => {
                let t = self.value(*a);
                let w = t.row_len();
                let off = start * w;
                accumulate(grads, *a, t.numel(), |d| add_into(&mut d[off..off + g.len()], g));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.row_len();
                let rows = node.value.rows();
                let mut col = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if needs(*p) {
                        accumulate(grads, *p, rows * w, |d| {
                            for r in 0..rows {
                                add_into(&mut d[r * w..(r + 1) * w], &g[r * total + col..r * total + col + w]);
                            }
                        });
                    }
                    col += w;
                }
            }
            Op::SliceCols(a, start) => {
                let s = self.shape(*a);
                let (rows, w) = (s[0], s[1]);
                let len = node.value.row_len();
                let start = *start;
                accumulate(grads, *a, rows * w, |d| {
                    for r in 0..rows {
                        add_into(&mut d[r * w + start..r * w + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::GatherRows(a, index) => {
                let t = self.value(*a);
                let w = t.row_len();
                accumulate(grads, *a, t.numel(), |d| {
                    for (o, &src) in index.iter().enumerate() {
                        add_into(&mut d[src * w..(src + 1) * w], &g[o * w..(o + 1) * w]);
                    }
                });
            }
            Op::SparseGather(a, plan) => {
                let t = self.value(*a);
                let w = t.row_len();
                accumulate(grads, *a, t.numel(), |d| {
                    for o in 0..plan.out_rows() {
                        let go = &g[o * w..(o + 1) * w];
                        for (src, wt) in plan.entries(o) {
                            kernels::axpy(wt, go, &mut d[src * w..(src + 1) * w]);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                accumulate(grads, *a, g.len(), |d| {
                    for ((dv, &gv), &xv) in d.iter_mut().zip(g).zip(x) {
                        *dv += gv * kernels::gelu_grad(xv);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                accumulate(grads, *a, g.len(), |d| {
                    for ((dv, &gv), &xv) in d.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                accumulate(grads, *a, g.len(), |d| {
                    for ((dv, &gv), &yv) in d.iter_mut().zip(g).zip(y) {
                        *dv += gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let w = y.row_len();
                accumulate(grads, *a, g.len(), |d| {
                    if w == 0 {
                        return;
                    }
                    for ((dr, gr), yr) in d.chunks_exact_mut(w).zip(g.chunks_exact(w)).zip(y.data().chunks_exact(w)) {
                        let s = kernels::dot(gr, yr);
                        for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *dv += yv * (gv - s);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let w = node.value.row_len();
                let gv = self.value(*gain).data();
                if needs(*x) && w > 0 {
                    let wn = T::of_usize(w);
                    accumulate(grads, *x, g.len(), |d| {
                        for (r, (dr, gr)) in d.chunks_exact_mut(w).zip(g.chunks_exact(w)).enumerate() {
                            let xh = &xhat[r * w..(r + 1) * w];
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for j in 0..w {
                                let dxh = gr[j] * gv[j];
                                m1 += dxh;
                                m2 += dxh * xh[j];
                            }
                            m1 /= wn;
                            m2 /= wn;
                            for j in 0..w {
                                dr[j] += rstd[r] * (gr[j] * gv[j] - m1 - xh[j] * m2);
                            }
                        }
                    });
                }
                if needs(*gain) && w > 0 {
                    accumulate(grads, *gain, w, |d| {
                        for (gr, xr) in g.chunks_exact(w).zip(xhat.chunks_exact(w)) {
                            for ((dv, &gy), &xh) in d.iter_mut().zip(gr).zip(xr) {
                                *dv += gy * xh;
                            }
                        }
                    });
                }
                if needs(*bias) && w > 0 {
                    accumulate(grads, *bias, w, |d| {
                        for gr in g.chunks_exact(w) {
                            add_into(d, gr);
                        }
                    });
                }
            }
            Op::GridSample { feature, points } => {
                let fs = self.shape(*feature);
                let (h, w, c) = (fs[0], fs[1], fs[2]);
                let f = self.value(*feature).data();
                let p = self.value(*points).data();
                let m = p.len() / 2;
                if needs(*feature) {
                    accumulate(grads, *feature, f.len(), |d| {
                        for i in 0..m {
                            let taps = bilinear_taps(p[2 * i], p[2 * i + 1], h, w);
                            let gi = &g[i * c..(i + 1) * c];
                            for (&cell, &wt) in taps.cells.iter().zip(&taps.weights) {
                                kernels::axpy(wt, gi, &mut d[cell * c..(cell + 1) * c]);
                            }
                        }
                    });
                }
                if needs(*points) {
                    accumulate(grads, *points, p.len(), |d| {
                        for i in 0..m {
                            let taps = bilinear_taps(p[2 * i], p[2 * i + 1], h, w);
                            let gi = &g[i * c..(i + 1) * c];
                            for t in 0..4 {
                                let s = kernels::dot(gi, &f[taps.cells[t] * c..(taps.cells[t] + 1) * c]);
                                d[2 * i] += taps.dx[t] * s;
                                d[2 * i + 1] += taps.dy[t] * s;
                            }
                        }
                    });
                }
            }
            Op::GroupedAttention { q, k, v, heads, group, weights, scale } => {
                let (heads, group, scale) = (*heads, *group, *scale);
                let (nq, c) = (node.value.rows(), node.value.row_len());
                let d = c / heads;
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![T::zero(); qd.len()];
                let mut dk = vec![T::zero(); kd.len()];
                let mut dv = vec![T::zero(); vd.len()];
                let mut ds = vec![T::zero(); group];
                for i in 0..nq {
                    for h in 0..heads {
                        let gh = &g[i * c + h * d..i * c + (h + 1) * d];
                        let base = (i * heads + h) * group;
                        let wrow = &weights[base..base + group];
                        let mut mean = T::zero();
                        for r in 0..group {
                            let row = base + r;
                            let da = kernels::dot(gh, &vd[row * c + h * d..row * c + (h + 1) * d]);
                            ds[r] = da;
                            mean += wrow[r] * da;
                            kernels::axpy(wrow[r], gh, &mut dv[row * c + h * d..row * c + (h + 1) * d]);
                        }
                        let qh = &qd[i * c + h * d..i * c + (h + 1) * d];
                        for r in 0..group {
                            let row = base + r;
                            let s = wrow[r] * (ds[r] - mean) * scale;
                            kernels::axpy(s, &kd[row * c + h * d..row * c + (h + 1) * d], &mut dq[i * c + h * d..i * c + (h + 1) * d]);
                            kernels::axpy(s, qh, &mut dk[row * c + h * d..row * c + (h + 1) * d]);
                        }
                    }
                }
                for (var, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if needs(var) {
                        accumulate(grads, var, buf.len(), |dst| add_into(dst, &buf));
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                accumulate(grads, *a, self.value(*a).numel(), |d| {
                    for x in d.iter_mut() {
                        *x += g0;
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let gs = g[0] / T::of_usize(n);
                accumulate(grads, *a, n, |d| {
                    for x in d.iter_mut() {
                        *x += gs;
                    }
                });
            }
            Op::Mse(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let s = g[0] * T::of(2.0) / T::of_usize(x.len());
                for (var, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if needs(var) {
                        accumulate(grads, var, x.len(), |d| {
                            for ((dv, &p), &q) in d.iter_mut().zip(x).zip(y) {
                                *dv += sign * s * (p - q);
                            }
                        });
                    }
                }
            }
            Op::L1(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let s = g[0] / T::of_usize(x.len());
                for (var, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if needs(var) {
                        accumulate(grads, var, x.len(), |d| {
                            for ((dv, &p), &q) in d.iter_mut().zip(x).zip(y) {
                                let diff = p - q;
                                if diff > T::zero() {
                                    *dv += sign * s;
                                } else if diff < T::zero() {
                                    *dv -= sign * s;
                                }
                            }
                        });
                    }
                }
            }
            Op::Kl(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let s = g[0] / T::of_usize(self.value(*a).rows());
                let tiny = T::min_positive_value();
                if needs(*a) {
                    accumulate(grads, *a, x.len(), |d| {
                        for ((dv, &p), &q) in d.iter_mut().zip(x).zip(y) {
                            *dv += s * (p.max(tiny).ln() - q.max(tiny).ln() + T::one());
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, x.len(), |d| {
                        for ((dv, &p), &q) in d.iter_mut().zip(x).zip(y) {
                            *dv -= s * p / q.max(tiny);
                        }
                    });
                }
            }
            Op::Focal { logits, labels, spec } => {
                let t = self.value(*logits);
                let w = t.row_len();
                let s = g[0] / T::of_usize(t.rows());
                let gamma = T::of(spec.gamma);
                accumulate(grads, *logits, t.numel(), |d| {
                    for (r, &y) in labels.iter().enumerate() {
                        let row = t.row(r);
                        let (logp, probs) = log_softmax_at(row, y);
                        let pt = logp.exp();
                        let at = T::of(focal_alpha(spec, y));
                        let one_m = T::one() - pt;
                        // d(loss)/d(pt) · pt, written to stay finite as pt → 1.
                        let focus = if spec.gamma == 0.0 || one_m <= T::zero() {
                            T::zero()
                        } else {
                            gamma * one_m.powf(gamma - T::one()) * pt * logp
                        };
                        let coeff = -at * (one_m.powf(gamma) - focus);
                        let dr = &mut d[r * w..(r + 1) * w];
                        for j in 0..w {
                            let delta = if j == y { T::one() } else { T::zero() };
                            dr[j] += s * coeff * (delta - probs[j]);
                        }
                    }
                });
            }
            Op::RowCosine { a, b, eps } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let w = ta.row_len();
                let n = ta.rows();
                let mut da = vec![T::zero(); n * w];
                let mut db = vec![T::zero(); n * w];
                for r in 0..n {
                    let (x, y) = (ta.row(r), tb.row(r));
                    let na2 = kernels::dot(x, x) + *eps;
                    let nb2 = kernels::dot(y, y) + *eps;
                    let inv = T::one() / (na2 * nb2).sqrt();
                    let cos = kernels::dot(x, y) * inv;
                    for j in 0..w {
                        da[r * w + j] = g[r] * (y[j] * inv - cos * x[j] / na2);
                        db[r * w + j] = g[r] * (x[j] * inv - cos * y[j] / nb2);
                    }
                }
                for (var, buf) in [(*a, da), (*b, db)] {
                    if needs(var) {
                        accumulate(grads, var, buf.len(), |dst| add_into(dst, &buf));
                    }
                }
            }
        }
    }
}

fn focal_alpha(spec: &FocalSpec, label: usize) -> f64 {
    match spec.background {
        Some(bg) if bg == label => 1.0 - spec.alpha,
        _ => spec.alpha,
    }
}

/// `(log p[y], softmax(row))`
fn log_softmax_at<T: Scalar>(row: &[T], y: usize) -> (T, Vec<T>) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let sum: T = row.iter().map(|&x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = row.iter().map(|&x| (x - lse).exp()).collect();
    (row[y] - lse, probs)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

/// Result of [`Graph::backward`]: one gradient per recorded node.
pub struct Gradients<T> {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to `v`; zeros if `v` did not
    /// participate.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// Whether any gradient reached `v`.
    pub fn touched(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}
