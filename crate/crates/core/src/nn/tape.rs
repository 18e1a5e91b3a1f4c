//! Tape-based reverse-mode differentiation over the layer primitives the two
//! models need.
//!
//! Every primitive records its inputs (and whatever it needs for the adjoint,
//! such as im2col buffers or pooling argmaxes) on the tape. [`Tape::backward`]
//! walks the tape in reverse once and accumulates gradients in a fixed order,
//! so results are bit-reproducible.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    /// Affine map over the last axis: `x[.., F] * w[F, U] + b[U]`.
    Dense { x: Var, w: Var, b: Var },
    CausalConv1d { x: Var, w: Var, b: Var, dilation: usize, cols: Vec<S> },
    Conv2d { x: Var, w: Var, b: Var, cols: Vec<S> },
    Relu { x: Var },
    Add { a: Var, b: Var },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    Upsample2d { x: Var, sh: usize, sw: usize },
    Reshape { x: Var },
    Mse { pred: Var, truth: Var },
    WeightedSum { x: Var, weights: Vec<S> },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let Some(&f) = xs.last() else {
            return Err(shape_err("dense", "input is a scalar".into()));
        };
        if ws.len() != 2 || ws[0] != f || bs != [ws[1]] {
            return Err(shape_err(
                "dense",
                format!("input {xs:?} weight {ws:?} bias {bs:?}"),
            ));
        }
        let u = ws[1];
        let m = self.value(x).len() / f.max(1);
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = u;
        let mut out = broadcast_rows(self.value(b).data(), m);
        S::gemm(m, f, u, self.value(x).data(), false, self.value(w).data(), false, S::ONE, &mut out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Dense { x, w, b }, needs))
    }

    /// Dilated causal convolution over time. `x: [B,T,C]`, `w: [K,C,F]`,
    /// `b: [F]`; the input is left-padded with `(K-1)*dilation` zeros.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(shape_err("causal_conv1d", "dilation must be positive".into()));
        }
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[2] || bs != [ws[2]] {
            return Err(shape_err(
                "causal_conv1d",
                format!("input {xs:?} weight {ws:?} bias {bs:?}"),
            ));
        }
        let (bn, t, c) = (xs[0], xs[1], xs[2]);
        let (k, f) = (ws[0], ws[2]);
        let xd = self.value(x).data();
        let width = k * c;
        let mut cols = vec![S::ZERO; bn * t * width];
        for bi in 0..bn {
            for ti in 0..t {
                let row = &mut cols[(bi * t + ti) * width..(bi * t + ti + 1) * width];
                for j in 0..k {
                    let lag = (k - 1 - j) * dilation;
                    if ti >= lag {
                        let src = (bi * t + ti - lag) * c;
                        row[j * c..(j + 1) * c].copy_from_slice(&xd[src..src + c]);
                    }
                }
            }
        }
        let m = bn * t;
        let mut out = broadcast_rows(self.value(b).data(), m);
        S::gemm(m, width, f, &cols, false, self.value(w).data(), false, S::ONE, &mut out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(&[bn, t, f], out)?,
            Op::CausalConv1d { x, w, b, dilation, cols },
            needs,
        ))
    }

    /// Stride-1 cross-correlation over the `(T, H)` axes with "same" zero
    /// padding. `x: [B,T,H,C]`, `w: [KT,KH,C,F]`, `b: [F]`.
    pub fn conv2d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || ws[2] != xs[3] || bs != [ws[3]] {
            return Err(shape_err("conv2d", format!("input {xs:?} weight {ws:?} bias {bs:?}")));
        }
        let (bn, t, h, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (kt, kh, f) = (ws[0], ws[1], ws[3]);
        if kt == 0 || kh == 0 || t == 0 || h == 0 {
            return Err(shape_err("conv2d", format!("kernel ({kt},{kh}) does not fit input {xs:?}")));
        }
        let (pt, ph) = ((kt - 1) / 2, (kh - 1) / 2);
        let xd = self.value(x).data();
        let width = kt * kh * c;
        let m = bn * t * h;
        let mut cols = vec![S::ZERO; m * width];
        for bi in 0..bn {
            for ti in 0..t {
                for hi in 0..h {
                    let r = (bi * t + ti) * h + hi;
                    let row = &mut cols[r * width..(r + 1) * width];
                    for i in 0..kt {
                        let Some(ts) = (ti + i).checked_sub(pt).filter(|&v| v < t) else {
                            continue;
                        };
                        for j in 0..kh {
                            let Some(hs) = (hi + j).checked_sub(ph).filter(|&v| v < h) else {
                                continue;
                            };
                            let src = ((bi * t + ts) * h + hs) * c;
                            let dst = (i * kh + j) * c;
                            row[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                        }
                    }
                }
            }
        }
        let mut out = broadcast_rows(self.value(b).data(), m);
        S::gemm(m, width, f, &cols, false, self.value(w).data(), false, S::ONE, &mut out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(&[bn, t, h, f], out)?, Op::Conv2d { x, w, b, cols }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > S::ZERO { v } else { S::ZERO });
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    /// Non-overlapping max pooling over `(T, H)`; ties go to the first index.
    pub fn maxpool2d(&mut self, x: Var, pool: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x);
        let (pt, ph) = pool;
        if xs.len() != 4 || pt == 0 || ph == 0 || xs[1] < pt || xs[2] < ph {
            return Err(shape_err("maxpool2d", format!("pool {pool:?} on input {xs:?}")));
        }
        let (bn, t, h, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (to, ho) = (t / pt, h / ph);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bn * to * ho * c);
        let mut argmax = Vec::with_capacity(out.capacity());
        for bi in 0..bn {
            for oi in 0..to {
                for oj in 0..ho {
                    for ci in 0..c {
                        let mut best = usize::MAX;
                        for i in 0..pt {
                            for j in 0..ph {
                                let idx = ((bi * t + oi * pt + i) * h + oj * ph + j) * c + ci;
                                if best == usize::MAX || xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(xd[best]);
                        argmax.push(best as u32);
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&[bn, to, ho, c], out)?, Op::MaxPool2d { x, argmax }, needs))
    }

    /// Nearest-neighbour repetition over `(T, H)`.
    pub fn upsample2d(&mut self, x: Var, size: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x);
        let (sh, sw) = size;
        if xs.len() != 4 || sh == 0 || sw == 0 {
            return Err(shape_err("upsample2d", format!("size {size:?} on input {xs:?}")));
        }
        let (bn, t, h, c) = (xs[0], xs[1], xs[2], xs[3]);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bn * t * sh * h * sw * c);
        for bi in 0..bn {
            for ti in 0..t * sh {
                for hi in 0..h * sw {
                    let src = ((bi * t + ti / sh) * h + hi / sw) * c;
                    out.extend_from_slice(&xd[src..src + c]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(&[bn, t * sh, h * sw, c], out)?,
            Op::Upsample2d { x, sh, sw },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape { x }, needs))
    }

    /// Mean squared error, a rank-0 result.
    pub fn mse(&mut self, pred: Var, truth: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(truth) {
            return Err(shape_err("mse", format!("{:?} vs {:?}", self.shape(pred), self.shape(truth))));
        }
        let n = self.value(pred).len();
        if n == 0 {
            return Err(shape_err("mse", "empty tensors".into()));
        }
        let mut acc = 0.0f64;
        for (&p, &t) in self.value(pred).data().iter().zip(self.value(truth).data()) {
            let d = (p - t).to_f64();
            acc += d * d;
        }
        let needs = self.needs(pred) || self.needs(truth);
        Ok(self.push(Tensor::scalar(S::from_f64(acc / n as f64)), Op::Mse { pred, truth }, needs))
    }

    /// `sum_i weights[i] * x[i]`, a rank-0 result.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<S>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(shape_err(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value(x).len()),
            ));
        }
        let mut acc = S::ZERO;
        for (&v, &w) in self.value(x).data().iter().zip(&weights) {
            acc += v * w;
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum { x, weights }, needs))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::ONE]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (f, u) = (wv.shape()[0], wv.shape()[1]);
                    let m = xv.len() / f.max(1);
                    self.affine_backward(&mut grads, &gy, xv.data(), m, f, u, *w, *b);
                    if self.needs(*x) {
                        let gx = acc_buf(&mut grads, *x, m * f);
                        S::gemm(m, u, f, &gy, false, wv.data(), true, S::ONE, gx);
                    }
                }
                Op::CausalConv1d { x, w, b, dilation, cols } => {
                    let (xs, ws) = (self.shape(*x), self.shape(*w));
                    let (bn, t, c) = (xs[0], xs[1], xs[2]);
                    let (k, f) = (ws[0], ws[2]);
                    let width = k * c;
                    let m = bn * t;
                    self.affine_backward(&mut grads, &gy, cols, m, width, f, *w, *b);
                    if self.needs(*x) {
                        let mut dcols = vec![S::ZERO; m * width];
                        S::gemm(m, f, width, &gy, false, self.value(*w).data(), true, S::ZERO, &mut dcols);
                        let dilation = *dilation;
                        let gx = acc_buf(&mut grads, *x, m * c);
                        for bi in 0..bn {
                            for ti in 0..t {
                                let row = &dcols[(bi * t + ti) * width..(bi * t + ti + 1) * width];
                                for j in 0..k {
                                    let lag = (k - 1 - j) * dilation;
                                    if ti >= lag {
                                        let dst = (bi * t + ti - lag) * c;
                                        for (g, &d) in gx[dst..dst + c].iter_mut().zip(&row[j * c..(j + 1) * c]) {
                                            *g += d;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Conv2d { x, w, b, cols } => {
                    let (xs, ws) = (self.shape(*x), self.shape(*w));
                    let (bn, t, h, c) = (xs[0], xs[1], xs[2], xs[3]);
                    let (kt, kh, f) = (ws[0], ws[1], ws[3]);
                    let width = kt * kh * c;
                    let m = bn * t * h;
                    self.affine_backward(&mut grads, &gy, cols, m, width, f, *w, *b);
                    if self.needs(*x) {
                        let mut dcols = vec![S::ZERO; m * width];
                        S::gemm(m, f, width, &gy, false, self.value(*w).data(), true, S::ZERO, &mut dcols);
                        let (pt, ph) = ((kt - 1) / 2, (kh - 1) / 2);
                        let gx = acc_buf(&mut grads, *x, bn * t * h * c);
                        for bi in 0..bn {
                            for ti in 0..t {
                                for hi in 0..h {
                                    let r = (bi * t + ti) * h + hi;
                                    let row = &dcols[r * width..(r + 1) * width];
                                    for ii in 0..kt {
                                        let Some(ts) = (ti + ii).checked_sub(pt).filter(|&v| v < t) else {
                                            continue;
                                        };
                                        for j in 0..kh {
                                            let Some(hs) = (hi + j).checked_sub(ph).filter(|&v| v < h) else {
                                                continue;
                                            };
                                            let dst = ((bi * t + ts) * h + hs) * c;
                                            let src = (ii * kh + j) * c;
                                            for (g, &d) in gx[dst..dst + c].iter_mut().zip(&row[src..src + c]) {
                                                *g += d;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).data();
                    let gx = acc_buf(&mut grads, *x, xv.len());
                    for ((g, &v), &d) in gx.iter_mut().zip(xv).zip(&gy) {
                        if v > S::ZERO {
                            *g += d;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            let g = acc_buf(&mut grads, v, gy.len());
                            for (g, &d) in g.iter_mut().zip(&gy) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::MaxPool2d { x, argmax } => {
                    let gx = acc_buf(&mut grads, *x, self.value(*x).len());
                    for (&idx, &d) in argmax.iter().zip(&gy) {
                        gx[idx as usize] += d;
                    }
                }
                Op::Upsample2d { x, sh, sw } => {
                    let xs = self.shape(*x);
                    let (bn, t, h, c) = (xs[0], xs[1], xs[2], xs[3]);
                    let gx = acc_buf(&mut grads, *x, bn * t * h * c);
                    let mut src = 0;
                    for bi in 0..bn {
                        for ti in 0..t * sh {
                            for hi in 0..h * sw {
                                let dst = ((bi * t + ti / sh) * h + hi / sw) * c;
                                for (g, &d) in gx[dst..dst + c].iter_mut().zip(&gy[src..src + c]) {
                                    *g += d;
                                }
                                src += c;
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    let gx = acc_buf(&mut grads, *x, gy.len());
                    for (g, &d) in gx.iter_mut().zip(&gy) {
                        *g += d;
                    }
                }
                Op::Mse { pred, truth } => {
                    let (p, t) = (self.value(*pred).data(), self.value(*truth).data());
                    let scale = gy[0] * S::from_f64(2.0 / p.len() as f64);
                    if self.needs(*pred) {
                        let g = acc_buf(&mut grads, *pred, p.len());
                        for ((g, &pv), &tv) in g.iter_mut().zip(p).zip(t) {
                            *g += scale * (pv - tv);
                        }
                    }
                    if self.needs(*truth) {
                        let g = acc_buf(&mut grads, *truth, p.len());
                        for ((g, &pv), &tv) in g.iter_mut().zip(p).zip(t) {
                            *g += scale * (tv - pv);
                        }
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let gx = acc_buf(&mut grads, *x, weights.len());
                    for (g, &w) in gx.iter_mut().zip(weights) {
                        *g += gy[0] * w;
                    }
                }
            }
        }
        // keep only leaf gradients
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Weight and bias adjoints of `y = cols * w + b`.
    #[allow(clippy::too_many_arguments)]
    fn affine_backward(
        &self,
        grads: &mut [Option<Vec<S>>],
        gy: &[S],
        cols: &[S],
        m: usize,
        k: usize,
        n: usize,
        w: Var,
        b: Var,
    ) {
        if self.needs(w) {
            let gw = acc_buf(grads, w, k * n);
            S::gemm(k, m, n, cols, true, gy, false, S::ONE, gw);
        }
        if self.needs(b) {
            let gb = acc_buf(grads, b, n);
            for row in gy.chunks_exact(n) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
    }
}

fn broadcast_rows<S: Scalar>(bias: &[S], m: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(bias.len() * m);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    out
}

fn acc_buf<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, len: usize) -> &mut [S] {
    grads[v.0].get_or_insert_with(|| vec![S::ZERO; len])
}
