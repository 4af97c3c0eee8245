//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! walks the tape in reverse and returns the gradient of a scalar output with
//! respect to every node that requires one. The op set is exactly what the
//! two transformers need, with multi-head attention and layer normalization
//! fused into single nodes.

use crate::tensor::{gemm, MatMut, MatRef, Matrix};

const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Shape information for a fused attention node.
///
/// Queries are `[batch * q_len, width]`, keys and values `[batch * kv_len, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub q_len: usize,
    pub kv_len: usize,
    pub heads: usize,
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Abs(Var),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    Sigmoid(Var),
    Gelu(Var),
    Silu(Var),
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    Tile {
        x: Var,
        times: usize,
    },
    RepeatRows {
        x: Var,
        each: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// An evaluation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    /// A trainable leaf; gradients flow to it.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient is computed for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    /// `x @ w + b`, with `b` a `[1, out]` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(
            xv.cols(),
            wv.rows(),
            "linear: input width {} vs weight rows {}",
            xv.cols(),
            wv.rows()
        );
        let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
        let mut out = Matrix::zeros(m, n);
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, n), "linear: bias shape");
            for r in 0..m {
                out.row_mut(r).copy_from_slice(bv.data());
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(
            m,
            k,
            n,
            1.0,
            MatRef::new(xv.data(), k as isize, 1),
            MatRef::new(wv.data(), n as isize, 1),
            beta,
            MatMut::new(out.data_mut(), n as isize, 1),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Linear { x, w, b }, &inputs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.linear(a, b, None)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Matrix::from_vec(av.rows(), av.cols(), data);
        self.push(value, op, &[a, b])
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

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len() as f64;
        self.push(Matrix::scalar(s), Op::MeanAll(a), &[a])
    }

    /// Row-wise layer normalization with optional `[1, width]` affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gamma {
            let gv = self.value(g);
            assert_eq!(gv.shape(), (1, cols), "layer_norm: gamma shape");
            for r in 0..rows {
                for (o, s) in out.row_mut(r).iter_mut().zip(gv.data()) {
                    *o *= s;
                }
            }
        }
        if let Some(b) = beta {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, cols), "layer_norm: beta shape");
            for r in 0..rows {
                for (o, s) in out.row_mut(r).iter_mut().zip(bv.data()) {
                    *o += s;
                }
            }
        }
        let mut inputs = vec![x];
        inputs.extend(gamma);
        inputs.extend(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &inputs,
        )
    }

    /// Scaled dot-product multi-head attention over already-projected
    /// queries, keys and values. Heads split the width into equal slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Var {
        let AttentionShape {
            batch,
            q_len,
            kv_len,
            heads,
        } = shape;
        let qv = self.value(q);
        let kv = self.value(k);
        let vv = self.value(v);
        let width = qv.cols();
        assert_eq!(qv.rows(), batch * q_len, "attention: query rows");
        assert_eq!(kv.shape(), (batch * kv_len, width), "attention: key shape");
        assert_eq!(vv.shape(), (batch * kv_len, width), "attention: value shape");
        assert!(heads > 0 && width % heads == 0, "attention: width not divisible by heads");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let ws = width as isize;
        let block = q_len * kv_len;
        let mut probs = vec![0.0; batch * heads * block];
        let mut out = Matrix::zeros(batch * q_len, width);
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * block..(b * heads + h + 1) * block];
                let q_off = b * q_len * width + h * dh;
                let k_off = b * kv_len * width + h * dh;
                gemm(
                    q_len,
                    dh,
                    kv_len,
                    scale,
                    MatRef::new(&qv.data()[q_off..], ws, 1),
                    MatRef::new(&kv.data()[k_off..], ws, 1).t(),
                    0.0,
                    MatMut::new(p, kv_len as isize, 1),
                );
                for row in p.chunks_mut(kv_len) {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        sum += *x;
                    }
                    let inv = 1.0 / sum;
                    for x in row.iter_mut() {
                        *x *= inv;
                    }
                }
                gemm(
                    q_len,
                    kv_len,
                    dh,
                    1.0,
                    MatRef::new(p, kv_len as isize, 1),
                    MatRef::new(&vv.data()[k_off..], ws, 1),
                    0.0,
                    MatMut::new(&mut out.data_mut()[q_off..], ws, 1),
                );
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Stacks `x` vertically `times` times.
    pub fn tile(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.len() * times);
        for _ in 0..times {
            data.extend_from_slice(xv.data());
        }
        let value = Matrix::from_vec(xv.rows() * times, xv.cols(), data);
        self.push(value, Op::Tile { x, times }, &[x])
    }

    /// Repeats every row `each` times in place: `[a; b] -> [a; a; b; b]` for `each = 2`.
    pub fn repeat_rows(&mut self, x: Var, each: usize) -> Var {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.len() * each);
        for r in 0..xv.rows() {
            for _ in 0..each {
                data.extend_from_slice(xv.row(r));
            }
        }
        let value = Matrix::from_vec(xv.rows() * each, xv.cols(), data);
        self.push(value, Op::RepeatRows { x, each }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        assert!(start + width <= xv.cols(), "slice_cols out of range");
        let value = Matrix::from_fn(xv.rows(), width, |r, c| xv.get(r, start + c));
        self.push(value, Op::SliceCols { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(x).clone().reshape(rows, cols);
        self.push(value, Op::Reshape(x), &[x])
    }

    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in &index {
            data.extend_from_slice(xv.row(i));
        }
        let value = Matrix::from_vec(index.len(), cols, data);
        self.push(value, Op::GatherRows { x, index }, &[x])
    }

    /// Mean over rows of `-log softmax(logits[row])[labels[row]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let lv = self.value(logits);
        let (rows, cols) = lv.shape();
        assert_eq!(labels.len(), rows, "softmax_cross_entropy: label count");
        let mut probs = Matrix::zeros(rows, cols);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            assert!(label < cols, "label out of range");
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let loss = if rows == 0 { 0.0 } else { total / rows as f64 };
        self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
            &[logits],
        )
    }

    /// Reverse pass from the scalar node `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).shape(),
            (1, 1),
            "backward requires a scalar output"
        );
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Matrix::scalar(1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                if self.needs(*x) {
                    let gx = grad_slot(grads, *x, m, k);
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        MatRef::new(dy.data(), n as isize, 1),
                        MatRef::new(wv.data(), n as isize, 1).t(),
                        1.0,
                        MatMut::new(gx.data_mut(), k as isize, 1),
                    );
                }
                if self.needs(*w) {
                    let gw = grad_slot(grads, *w, k, n);
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        MatRef::new(xv.data(), k as isize, 1).t(),
                        MatRef::new(dy.data(), n as isize, 1),
                        1.0,
                        MatMut::new(gw.data_mut(), n as isize, 1),
                    );
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let gb = grad_slot(grads, *b, 1, n);
                        for r in 0..m {
                            for (g, d) in gb.data_mut().iter_mut().zip(dy.row(r)) {
                                *g += d;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, v, dy, |_, d| d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, dy, |_, d| d);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, dy, |_, d| -d);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = val(*b);
                    accumulate(grads, *a, dy, |i, d| d * bv.data()[i]);
                }
                if self.needs(*b) {
                    let av = val(*a);
                    accumulate(grads, *b, dy, |i, d| d * av.data()[i]);
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, dy, |_, d| d * c),
            Op::Abs(a) => {
                let av = val(*a);
                accumulate(grads, *a, dy, |i, d| {
                    let x = av.data()[i];
                    if x > 0.0 {
                        d
                    } else if x < 0.0 {
                        -d
                    } else {
                        0.0
                    }
                });
            }
            Op::Square(a) => {
                let av = val(*a);
                accumulate(grads, *a, dy, |i, d| 2.0 * av.data()[i] * d);
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                let d = dy.data()[0];
                let g = grad_slot(grads, *a, r, c);
                g.data_mut().iter_mut().for_each(|x| *x += d);
            }
            Op::MeanAll(a) => {
                let (r, c) = val(*a).shape();
                let d = dy.data()[0] / (r * c) as f64;
                let g = grad_slot(grads, *a, r, c);
                g.data_mut().iter_mut().for_each(|x| *x += d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                accumulate(grads, *a, dy, |i, d| {
                    let s = y.data()[i];
                    d * s * (1.0 - s)
                });
            }
            Op::Gelu(a) => {
                let av = val(*a);
                accumulate(grads, *a, dy, |i, d| d * gelu_grad(av.data()[i]));
            }
            Op::Silu(a) => {
                let av = val(*a);
                accumulate(grads, *a, dy, |i, d| {
                    let x = av.data()[i];
                    let s = sigmoid(x);
                    d * s * (1.0 + x * (1.0 - s))
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (rows, cols) = xhat.shape();
                if let Some(g) = gamma {
                    if self.needs(*g) {
                        let gg = grad_slot(grads, *g, 1, cols);
                        for r in 0..rows {
                            for ((o, d), xh) in
                                gg.data_mut().iter_mut().zip(dy.row(r)).zip(xhat.row(r))
                            {
                                *o += d * xh;
                            }
                        }
                    }
                }
                if let Some(b) = beta {
                    if self.needs(*b) {
                        let gb = grad_slot(grads, *b, 1, cols);
                        for r in 0..rows {
                            for (o, d) in gb.data_mut().iter_mut().zip(dy.row(r)) {
                                *o += d;
                            }
                        }
                    }
                }
                if self.needs(*x) {
                    let gamma_v = gamma.map(val);
                    let gx = grad_slot(grads, *x, rows, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        for (c, d) in dxhat.iter_mut().enumerate() {
                            let s = gamma_v.map_or(1.0, |g| g.data()[c]);
                            *d = dy.get(r, c) * s;
                        }
                        let xh = xhat.row(r);
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dx =
                            dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for ((o, d), h) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                            *o += rstd[r] * (d - mean_d - h * mean_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => self.attention_backward(*q, *k, *v, *shape, probs, dy, grads),
            Op::Tile { x, times } => {
                let (r, c) = val(*x).shape();
                let g = grad_slot(grads, *x, r, c);
                for t in 0..*times {
                    let chunk = &dy.data()[t * r * c..(t + 1) * r * c];
                    for (o, d) in g.data_mut().iter_mut().zip(chunk) {
                        *o += d;
                    }
                }
            }
            Op::RepeatRows { x, each } => {
                let (r, c) = val(*x).shape();
                let g = grad_slot(grads, *x, r, c);
                for row in 0..r {
                    for j in 0..*each {
                        let src = dy.row(row * each + j);
                        for (o, d) in g.row_mut(row).iter_mut().zip(src) {
                            *o += d;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = val(*x).shape();
                let g = grad_slot(grads, *x, r, c);
                for row in 0..r {
                    let dst = &mut g.row_mut(row)[*start..*start + dy.cols()];
                    for (o, d) in dst.iter_mut().zip(dy.row(row)) {
                        *o += d;
                    }
                }
            }
            Op::Reshape(x) => {
                let (r, c) = val(*x).shape();
                let g = grad_slot(grads, *x, r, c);
                for (o, d) in g.data_mut().iter_mut().zip(dy.data()) {
                    *o += d;
                }
            }
            Op::GatherRows { x, index } => {
                let (r, c) = val(*x).shape();
                let g = grad_slot(grads, *x, r, c);
                for (i, &src) in index.iter().enumerate() {
                    for (o, d) in g.row_mut(src).iter_mut().zip(dy.row(i)) {
                        *o += d;
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (rows, cols) = probs.shape();
                let scale = dy.data()[0] / rows.max(1) as f64;
                let g = grad_slot(grads, *logits, rows, cols);
                for (r, &label) in labels.iter().enumerate() {
                    for (c, (o, p)) in g.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                        let target = if c == label { 1.0 } else { 0.0 };
                        *o += scale * (p - target);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[f64],
        dy: &Matrix,
        grads: &mut [Option<Matrix>],
    ) {
        let AttentionShape {
            batch,
            q_len,
            kv_len,
            heads,
        } = shape;
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let width = qv.cols();
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let ws = width as isize;
        let block = q_len * kv_len;
        let lk = kv_len as isize;

        let mut gq = Matrix::zeros(batch * q_len, width);
        let mut gk = Matrix::zeros(batch * kv_len, width);
        let mut gv = Matrix::zeros(batch * kv_len, width);
        let mut dp = vec![0.0; block];
        for b in 0..batch {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * block..(b * heads + h + 1) * block];
                let q_off = b * q_len * width + h * dh;
                let k_off = b * kv_len * width + h * dh;
                // dV = P^T dO
                gemm(
                    kv_len,
                    q_len,
                    dh,
                    1.0,
                    MatRef::new(p, lk, 1).t(),
                    MatRef::new(&dy.data()[q_off..], ws, 1),
                    0.0,
                    MatMut::new(&mut gv.data_mut()[k_off..], ws, 1),
                );
                // dP = dO V^T
                gemm(
                    q_len,
                    dh,
                    kv_len,
                    1.0,
                    MatRef::new(&dy.data()[q_off..], ws, 1),
                    MatRef::new(&vv.data()[k_off..], ws, 1).t(),
                    0.0,
                    MatMut::new(&mut dp, lk, 1),
                );
                // dS = P * (dP - rowsum(dP * P))
                for (drow, prow) in dp.chunks_mut(kv_len).zip(p.chunks(kv_len)) {
                    let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for (d, pv) in drow.iter_mut().zip(prow) {
                        *d = pv * (*d - dot);
                    }
                }
                // dQ = scale * dS K
                gemm(
                    q_len,
                    kv_len,
                    dh,
                    scale,
                    MatRef::new(&dp, lk, 1),
                    MatRef::new(&kv.data()[k_off..], ws, 1),
                    0.0,
                    MatMut::new(&mut gq.data_mut()[q_off..], ws, 1),
                );
                // dK = scale * dS^T Q
                gemm(
                    kv_len,
                    q_len,
                    dh,
                    scale,
                    MatRef::new(&dp, lk, 1).t(),
                    MatRef::new(&qv.data()[q_off..], ws, 1),
                    0.0,
                    MatMut::new(&mut gk.data_mut()[k_off..], ws, 1),
                );
            }
        }
        for (var, g) in [(q, gq), (k, gk), (v, gv)] {
            if self.needs(var) {
                add_grad(grads, var, g);
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Matrix>], v: Var, rows: usize, cols: usize) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
}

fn add_grad(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, dy: &Matrix, f: impl Fn(usize, f64) -> f64) {
    let g = grad_slot(grads, v, dy.rows(), dy.cols());
    for (i, (o, &d)) in g.data_mut().iter_mut().zip(dy.data()).enumerate() {
        *o += f(i, d);
    }
}
