//! Eager tape: every op computes its value immediately and records enough
//! context to run the vector-Jacobian product in reverse order.

use std::collections::HashMap;

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    Log(Var),
    Pow { x: Var, p: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    Concat { xs: Vec<Var>, axis: usize },
    ReduceMax { x: Var, argmax: Vec<usize> },
    ReduceSum { x: Var, axis: usize },
    SumAll(Var),
    Embedding { table: Var, indices: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    UpConv { x: Var, w: Var, b: Var },
    Reshape(Var),
    Transpose(Var),
    Crop2d { x: Var, top: usize, left: usize },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(x, _) | AddScalar(x) | Relu(x) | Sigmoid(x) | Log(x) | SumAll(x) | Reshape(x)
            | Transpose(x) => vec![*x],
            Softmax { x, .. }
            | Pow { x, .. }
            | Clamp { x, .. }
            | ReduceMax { x, .. }
            | ReduceSum { x, .. }
            | MaxPool { x, .. }
            | Crop2d { x, .. } => vec![*x],
            Concat { xs, .. } => xs.clone(),
            Embedding { table, .. } => vec![*table],
            Conv2d { x, w, b } | UpConv { x, w, b } => vec![*x, *w, *b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded while recording; values are
/// immutable once pushed.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient for `v`; unused leaves get zeros. Panics if `v` is not a
    /// trainable leaf of the tape that produced these gradients.
    pub fn get(&self, v: Var) -> &Tensor {
        self.grads
            .get(&v.0)
            .unwrap_or_else(|| panic!("no gradient recorded for {v:?}"))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads
            .remove(&v.0)
            .unwrap_or_else(|| panic!("no gradient recorded for {v:?}"))
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

/// Per-lhs-axis strides into the rhs buffer, 0 where rhs broadcasts.
fn broadcast_strides(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    if rhs.len() > lhs.len() {
        return Err(shape_err(op, lhs, rhs));
    }
    let offset = lhs.len() - rhs.len();
    let mut strides = vec![0usize; lhs.len()];
    let mut stride = 1usize;
    for a in (0..rhs.len()).rev() {
        let (l, r) = (lhs[a + offset], rhs[a]);
        if r == l {
            strides[a + offset] = stride;
        } else if r != 1 {
            return Err(shape_err(op, lhs, rhs));
        }
        stride *= r;
    }
    Ok(strides)
}

/// Calls `f(lhs_index, rhs_index)` for every lhs element.
fn for_each_broadcast(lhs: &[usize], strides: &[usize], rhs_len: usize, mut f: impl FnMut(usize, usize)) {
    let n = numel(lhs);
    if rhs_len == n {
        (0..n).for_each(|i| f(i, i));
        return;
    }
    if rhs_len == 1 {
        (0..n).for_each(|i| f(i, 0));
        return;
    }
    let mut counter = vec![0usize; lhs.len()];
    let mut r = 0usize;
    for i in 0..n {
        f(i, r);
        for a in (0..lhs.len()).rev() {
            counter[a] += 1;
            r += strides[a];
            if counter[a] < lhs[a] {
                break;
            }
            r -= strides[a] * lhs[a];
            counter[a] = 0;
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn fnv(hash: &mut u64, v: u64) {
    for b in v.to_le_bytes() {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf (inputs, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn map_unary(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, out, op)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    /// Elementwise sum; `b` broadcasts numpy-style onto `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let strides = broadcast_strides("add", av.shape(), bv.shape())?;
        let mut out = av.data().to_vec();
        let bd = bv.data();
        for_each_broadcast(av.shape(), &strides, bd.len(), |i, r| out[i] += bd[r]);
        let shape = av.shape().to_vec();
        self.push("add", Tensor::new(shape, out)?, Op::Add(a, b))
    }

    /// Elementwise product; `b` broadcasts onto `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let strides = broadcast_strides("mul", av.shape(), bv.shape())?;
        let mut out = av.data().to_vec();
        let bd = bv.data();
        for_each_broadcast(av.shape(), &strides, bd.len(), |i, r| out[i] *= bd[r]);
        let shape = av.shape().to_vec();
        self.push("mul", Tensor::new(shape, out)?, Op::Mul(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map_unary("scale", x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map_unary("add_scalar", x, Op::AddScalar(x), |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_unary("relu", x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_unary("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(shape_err("softmax", xv.shape(), &[axis]));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let xd = xv.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mx = (0..len).map(|a| xd[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for a in 0..len {
                    let e = (xd[at(a)] - mx).exp();
                    out[at(a)] = e;
                    sum += e;
                }
                for a in 0..len {
                    out[at(a)] /= sum;
                }
            }
        }
        let shape = xv.shape().to_vec();
        self.push("softmax", Tensor::new(shape, out)?, Op::Softmax { x, axis })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NonFinite("log of non-positive value".into()));
        }
        self.map_unary("log", x, Op::Log(x), f64::ln)
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var> {
        self.map_unary("pow", x, Op::Pow { x, p }, |v| v.powf(p))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("clamp range [{lo}, {hi}] is empty")));
        }
        self.map_unary("clamp", x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(a, (l, r))| a == axis || l == r);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", Tensor::new(shape, out)?, Op::Concat { xs: xs.to_vec(), axis })
    }

    /// Max along `axis` (axis removed). Ties resolve to the lowest index.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() || xv.shape()[axis] == 0 {
            return Err(shape_err("reduce_max", xv.shape(), &[axis]));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let xd = xv.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * len) * inner + i;
                for a in 1..len {
                    let idx = (o * len + a) * inner + i;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        self.push("reduce_max", Tensor::new(shape, out)?, Op::ReduceMax { x, argmax })
    }

    /// Sum along `axis` (axis removed).
    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(shape_err("reduce_sum", xv.shape(), &[axis]));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let xd = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &xd[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        self.push("reduce_sum", Tensor::new(shape, out)?, Op::ReduceSum { x, axis })
    }

    /// Sum of all elements, shape `[]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Rows of a `[vocab, dim]` table, one per index: `[indices.len(), dim]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(shape_err("embedding", tv.shape(), &[]));
        }
        let (vocab, dim) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidArgument(format!("embedding index {bad} >= vocabulary {vocab}")));
        }
        let td = tv.data();
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&td[i * dim..(i + 1) * dim]);
        }
        self.push(
            "embedding",
            Tensor::new(vec![indices.len(), dim], out)?,
            Op::Embedding { table, indices: indices.to_vec() },
        )
    }

    /// Unpadded 3x3 convolution: `x [ci, h, w]`, `w [co, ci, 3, 3]`,
    /// `b [co]` -> `[co, h-2, w-2]`.
    pub fn conv2d_3x3_valid(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != 3 || ws[3] != 3 {
            return Err(shape_err("conv2d_3x3_valid", xs, ws));
        }
        if xs[1] < 3 || xs[2] < 3 {
            return Err(shape_err("conv2d_3x3_valid", xs, &[3, 3]));
        }
        if bv.shape() != [ws[0]] {
            return Err(shape_err("conv2d_3x3_valid", ws, bv.shape()));
        }
        let (ci_n, h, wd) = (xs[0], xs[1], xs[2]);
        let co_n = ws[0];
        let (ho, wo) = (h - 2, wd - 2);
        let (xd, wdata, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; co_n * ho * wo];
        for co in 0..co_n {
            let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..ci_n {
                let xin = &xd[ci * h * wd..(ci + 1) * h * wd];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wk = wdata[((co * ci_n + ci) * 3 + ky) * 3 + kx];
                        for oy in 0..ho {
                            let src = &xin[(oy + ky) * wd + kx..(oy + ky) * wd + kx + wo];
                            let dst = &mut plane[oy * wo..(oy + 1) * wo];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wk * s;
                            }
                        }
                    }
                }
            }
        }
        self.push("conv2d_3x3_valid", Tensor::new(vec![co_n, ho, wo], out)?, Op::Conv2d { x, w, b })
    }

    /// 2x2 max pooling with stride 2 over `[c, h, w]`; `h`, `w` must be even.
    /// Ties resolve to the first position in row-major window order.
    pub fn maxpool_2x2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let xs = xv.shape();
        if xs.len() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0 || xs[1] == 0 || xs[2] == 0 {
            return Err(shape_err("maxpool_2x2", xs, &[2, 2]));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (h / 2, w / 2);
        let xd = xv.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ch * h * w + 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if xd[cand] > xd[best] {
                            best = cand;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        self.push("maxpool_2x2", Tensor::new(vec![c, ho, wo], out)?, Op::MaxPool { x, argmax })
    }

    /// Stride-2 transposed convolution with a 2x2 kernel:
    /// `x [ci, h, w]`, `w [ci, co, 2, 2]`, `b [co]` -> `[co, 2h, 2w]`.
    pub fn upconv_2x2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] || ws[2] != 2 || ws[3] != 2 {
            return Err(shape_err("upconv_2x2", xs, ws));
        }
        if bv.shape() != [ws[1]] {
            return Err(shape_err("upconv_2x2", ws, bv.shape()));
        }
        let (ci_n, h, wd) = (xs[0], xs[1], xs[2]);
        let co_n = ws[1];
        let (ho, wo) = (2 * h, 2 * wd);
        let (xd, wdata, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; co_n * ho * wo];
        for co in 0..co_n {
            let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..ci_n {
                let xin = &xd[ci * h * wd..(ci + 1) * h * wd];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let wk = wdata[((ci * co_n + co) * 2 + dy) * 2 + dx];
                        for y in 0..h {
                            let row = &mut plane[(2 * y + dy) * wo..(2 * y + dy + 1) * wo];
                            let src = &xin[y * wd..(y + 1) * wd];
                            for (xx, s) in src.iter().enumerate() {
                                row[2 * xx + dx] += wk * s;
                            }
                        }
                    }
                }
            }
        }
        self.push("upconv_2x2", Tensor::new(vec![co_n, ho, wo], out)?, Op::UpConv { x, w, b })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(shape_err("transpose", xv.shape(), &[]));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let xd = xv.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        self.push("transpose", Tensor::new(vec![c, r], out)?, Op::Transpose(x))
    }

    /// Spatial window `[c, top..top+h, left..left+w]` of a `[c, H, W]` map.
    pub fn crop2d(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let xv = self.value(x);
        let xs = xv.shape();
        if xs.len() != 3 || top + h > xs[1] || left + w > xs[2] {
            return Err(shape_err("crop2d", xs, &[top + h, left + w]));
        }
        let (c, hh, ww) = (xs[0], xs[1], xs[2]);
        let xd = xv.data();
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let start = ch * hh * ww + (top + y) * ww + left;
                out.extend_from_slice(&xd[start..start + w]);
            }
        }
        self.push("crop2d", Tensor::new(vec![c, h, w], out)?, Op::Crop2d { x, top, left })
    }

    /// Hash of every data-dependent branch taken during the forward pass
    /// (relu masks, clamp ranges, argmax choices, gather indices). Two
    /// evaluations with equal signatures lie in the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (n, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    fnv(&mut h, n as u64);
                    for &v in self.value(*x).data() {
                        fnv(&mut h, (v > 0.0) as u64);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    fnv(&mut h, n as u64);
                    for &v in self.value(*x).data() {
                        fnv(&mut h, (v < *lo) as u64 + 2 * (v > *hi) as u64);
                    }
                }
                Op::ReduceMax { argmax, .. } | Op::MaxPool { argmax, .. } => {
                    fnv(&mut h, n as u64);
                    argmax.iter().for_each(|&a| fnv(&mut h, a as u64));
                }
                Op::Embedding { indices, .. } => {
                    fnv(&mut h, n as u64);
                    indices.iter().for_each(|&a| fnv(&mut h, a as u64));
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse-mode sweep from a scalar `loss`. Returns gradients for every
    /// trainable leaf; leaves that do not influence the loss get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for n in (0..=loss.0).rev() {
            let Some(g) = grads[n].take() else { continue };
            let node = &self.nodes[n];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[n] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads)?;
        }

        let mut out = HashMap::new();
        for (n, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let data = grads
                    .get_mut(n)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                out.insert(n, Tensor::new(node.value.shape().to_vec(), data)?);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                grad_slot(grads, nodes, $v)
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let da = acc!(*a);
                    let bd = bv.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[i * k + p] += dot(grow, brow);
                        }
                    }
                }
                if wants(*b) {
                    let db = acc!(*b);
                    let ad = av.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc!(*a).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if wants(*b) {
                    let shape = self.shape(*a);
                    let bv = self.value(*b);
                    let strides = broadcast_strides("add", shape, bv.shape())?;
                    let db = acc!(*b);
                    for_each_broadcast(shape, &strides, bv.len(), |i, r| db[r] += g[i]);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let strides = broadcast_strides("mul", av.shape(), bv.shape())?;
                if wants(*a) {
                    let da = acc!(*a);
                    let bd = bv.data();
                    for_each_broadcast(av.shape(), &strides, bv.len(), |i, r| da[i] += g[i] * bd[r]);
                }
                if wants(*b) {
                    let db = acc!(*b);
                    let ad = av.data();
                    for_each_broadcast(av.shape(), &strides, bv.len(), |i, r| db[r] += g[i] * ad[i]);
                }
            }
            Op::Scale(x, c) => {
                acc!(*x).iter_mut().zip(g).for_each(|(d, v)| *d += c * v);
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                acc!(*x).iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                for ((d, v), &xi) in acc!(*x).iter_mut().zip(g).zip(xd) {
                    if xi > 0.0 {
                        *d += v;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                for ((d, v), &yi) in acc!(*x).iter_mut().zip(g).zip(y) {
                    *d += v * yi * (1.0 - yi);
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let dx = acc!(*x);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                        for a in 0..len {
                            dx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                for ((d, v), &xi) in acc!(*x).iter_mut().zip(g).zip(xd) {
                    *d += v / xi;
                }
            }
            Op::Pow { x, p } => {
                let xd = self.value(*x).data();
                for ((d, v), &xi) in acc!(*x).iter_mut().zip(g).zip(xd) {
                    *d += v * p * xi.powf(p - 1.0);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.value(*x).data();
                for ((d, v), &xi) in acc!(*x).iter_mut().zip(g).zip(xd) {
                    if xi >= *lo && xi <= *hi {
                        *d += v;
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let total = node.value.shape()[*axis];
                let outer = numel(&node.value.shape()[..*axis]);
                let inner = numel(&node.value.shape()[*axis + 1..]);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if wants(x) {
                        let dx = acc!(x);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (d, s) in dx[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::ReduceMax { x, argmax } | Op::MaxPool { x, argmax } => {
                let dx = acc!(*x);
                for (&a, v) in argmax.iter().zip(g) {
                    dx[a] += v;
                }
            }
            Op::ReduceSum { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let dx = acc!(*x);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        for (d, s) in dx[(o * len + a) * inner..(o * len + a + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                acc!(*x).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Embedding { table, indices } => {
                let dim = self.shape(*table)[1];
                let dt = acc!(*table);
                for (r, &i) in indices.iter().enumerate() {
                    for (d, s) in dt[i * dim..(i + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                        *d += s;
                    }
                }
            }
            Op::Conv2d { x, w, b } => self.conv2d_backward(*x, *w, *b, g, grads)?,
            Op::UpConv { x, w, b } => self.upconv_backward(*x, *w, *b, g, grads)?,
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dx = acc!(*x);
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Crop2d { x, top, left } => {
                let xs = self.shape(*x);
                let (hh, ww) = (xs[1], xs[2]);
                let os = node.value.shape();
                let (c, h, w) = (os[0], os[1], os[2]);
                let dx = acc!(*x);
                for ch in 0..c {
                    for y in 0..h {
                        let start = ch * hh * ww + (top + y) * ww + left;
                        for (d, s) in dx[start..start + w].iter_mut().zip(&g[(ch * h + y) * w..(ch * h + y + 1) * w]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn conv2d_backward(&self, x: Var, w: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (ci_n, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let co_n = wv.shape()[0];
        let (ho, wo) = (h - 2, wd - 2);
        let (xd, wdata) = (xv.data(), wv.data());

        if self.nodes[b.0].requires_grad {
            let db = grads[b.0].get_or_insert_with(|| vec![0.0; co_n]);
            for co in 0..co_n {
                db[co] += g[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
            }
        }
        if self.nodes[w.0].requires_grad {
            let dw = grads[w.0].get_or_insert_with(|| vec![0.0; wdata.len()]);
            for co in 0..co_n {
                let gp = &g[co * ho * wo..(co + 1) * ho * wo];
                for ci in 0..ci_n {
                    let xin = &xd[ci * h * wd..(ci + 1) * h * wd];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let mut s = 0.0;
                            for oy in 0..ho {
                                let src = &xin[(oy + ky) * wd + kx..(oy + ky) * wd + kx + wo];
                                s += dot(&gp[oy * wo..(oy + 1) * wo], src);
                            }
                            dw[((co * ci_n + ci) * 3 + ky) * 3 + kx] += s;
                        }
                    }
                }
            }
        }
        if self.nodes[x.0].requires_grad {
            let dx = grads[x.0].get_or_insert_with(|| vec![0.0; xd.len()]);
            for co in 0..co_n {
                let gp = &g[co * ho * wo..(co + 1) * ho * wo];
                for ci in 0..ci_n {
                    let dxin = &mut dx[ci * h * wd..(ci + 1) * h * wd];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wk = wdata[((co * ci_n + ci) * 3 + ky) * 3 + kx];
                            for oy in 0..ho {
                                let dst = &mut dxin[(oy + ky) * wd + kx..(oy + ky) * wd + kx + wo];
                                for (d, s) in dst.iter_mut().zip(&gp[oy * wo..(oy + 1) * wo]) {
                                    *d += wk * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn upconv_backward(&self, x: Var, w: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (ci_n, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let co_n = wv.shape()[1];
        let (ho, wo) = (2 * h, 2 * wd);
        let (xd, wdata) = (xv.data(), wv.data());

        if self.nodes[b.0].requires_grad {
            let db = grads[b.0].get_or_insert_with(|| vec![0.0; co_n]);
            for co in 0..co_n {
                db[co] += g[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
            }
        }
        let want_w = self.nodes[w.0].requires_grad;
        let want_x = self.nodes[x.0].requires_grad;
        if want_w {
            let dw = grads[w.0].get_or_insert_with(|| vec![0.0; wdata.len()]);
            for co in 0..co_n {
                let gp = &g[co * ho * wo..(co + 1) * ho * wo];
                for ci in 0..ci_n {
                    let xin = &xd[ci * h * wd..(ci + 1) * h * wd];
                    for dy in 0..2 {
                        for dxk in 0..2 {
                            let mut s = 0.0;
                            for y in 0..h {
                                let grow = &gp[(2 * y + dy) * wo..(2 * y + dy + 1) * wo];
                                for (xx, xvv) in xin[y * wd..(y + 1) * wd].iter().enumerate() {
                                    s += grow[2 * xx + dxk] * xvv;
                                }
                            }
                            dw[((ci * co_n + co) * 2 + dy) * 2 + dxk] += s;
                        }
                    }
                }
            }
        }
        if want_x {
            let dx = grads[x.0].get_or_insert_with(|| vec![0.0; xd.len()]);
            for co in 0..co_n {
                let gp = &g[co * ho * wo..(co + 1) * ho * wo];
                for ci in 0..ci_n {
                    let dxin = &mut dx[ci * h * wd..(ci + 1) * h * wd];
                    for dy in 0..2 {
                        for dxk in 0..2 {
                            let wk = wdata[((ci * co_n + co) * 2 + dy) * 2 + dxk];
                            for y in 0..h {
                                let grow = &gp[(2 * y + dy) * wo..(2 * y + dy + 1) * wo];
                                for (xx, d) in dxin[y * wd..(y + 1) * wd].iter_mut().enumerate() {
                                    *d += wk * grow[2 * xx + dxk];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn grad_slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Dot product with four independent accumulators, so it vectorizes while
/// staying deterministic for a given length.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
