//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so walking the node list from the
//! loss back to index zero visits every operation in reverse topological
//! order. Each primitive checks its output for NaN/Inf and reports itself by
//! name rather than letting non-finite values flow downstream.

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

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
    AddBias(Var, Var),
    AddChannelBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    AvgPool2d(Var, usize),
    GlobalAvgPool(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, smoothing: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool2d(..) => "avg_pool2d",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    /// Softmax probabilities kept by the cross-entropy node, or the 0/1 gate
    /// of a relu node.
    aux: Option<Vec<T>>,
}

#[derive(Default)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    /// Gates imposed on successive relu calls instead of `x > 0`.
    fixed_gates: Option<Vec<Vec<T>>>,
    relu_calls: usize,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to the leaf `v`; exactly zero when `v` did not
    /// feed the loss. Only leaf adjoints are retained after the sweep.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

fn check<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn add_into<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), fixed_gates: None, relu_calls: 0 }
    }

    /// A tape whose `i`-th relu call computes `gates[i] ⊙ x`, so the graph is
    /// linear in the relu inputs and differentiates as such.
    pub fn with_relu_gates(gates: Vec<Vec<T>>) -> Self {
        Tape { nodes: Vec::new(), fixed_gates: Some(gates), relu_calls: 0 }
    }

    /// The 0/1 gate of every relu node, in call order.
    pub fn relu_gates(&self) -> Vec<Vec<T>> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu(_)))
            .map(|n| n.aux.clone().expect("relu node keeps its gate"))
            .collect()
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

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Result<Var> {
        check(op.name(), &value)?;
        self.nodes.push(Node { value, op, requires_grad, aux: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input: gradients flow into it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, aux: None });
        Var(self.nodes.len() - 1)
    }

    /// Fixed input: no gradient is accumulated for it or on its behalf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false, aux: None });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::shape("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let n = sx[1];
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::AddBias(x, b), rg)
    }

    /// Adds a per-channel bias to an `N×C×H×W` tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 4 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::shape("add_channel_bias", format!("{sx:?} + {sb:?}")));
        }
        let plane = sx[2] * sx[3];
        let c = sx[1];
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::AddChannelBias(x, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let cs = T::from_f64(c);
        let out = self.value(a).map(|v| v * cs);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let want: usize = shape.iter().product();
        if want != t.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", t.shape())));
        }
        let out = Tensor::new(shape, t.data().to_vec())?;
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let gate: Vec<T> = match &self.fixed_gates {
            Some(gates) => {
                let g = gates.get(self.relu_calls).filter(|g| g.len() == x.len()).ok_or_else(|| {
                    Error::shape("relu", format!("no gate of length {} for relu call {}", x.len(), self.relu_calls))
                })?;
                g.clone()
            }
            None => x.data().iter().map(|&v| if v > T::ZERO { T::ONE } else { T::ZERO }).collect(),
        };
        let data = x.data().iter().zip(&gate).map(|(&v, &g)| v * g).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.relu_calls += 1;
        let rg = self.rg(a);
        let v = self.push(out, Op::Relu(a), rg)?;
        self.nodes[v.0].aux = Some(gate);
        Ok(v)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.tanh());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| {
            if v >= T::ZERO {
                T::ONE / (T::ONE + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::ONE + e)
            }
        });
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn identity(&mut self, a: Var) -> Var {
        a
    }

    /// `x: N×C×H×W`, `w: O×C×kh×kw` → `N×O×Ho×Wo`, via patch gather + matmul.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape("conv2d", format!("input {sx:?}, kernel {sw:?}")));
        }
        let g = ConvGeom {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kernel_h: sw[2],
            kernel_w: sw[3],
            stride,
            pad,
        };
        if !g.valid() {
            return Err(Error::shape("conv2d", format!("kernel {sw:?} does not fit input {sx:?}")));
        }
        let (n, o) = (sx[0], sw[0]);
        let (oh, ow) = (g.out_h(), g.out_w());
        let spatial = oh * ow;
        let plen = g.patch_len();
        let sample = g.channels * g.height * g.width;
        let mut cols = vec![T::ZERO; plen * spatial];
        let mut out = vec![T::ZERO; n * o * spatial];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for s in 0..n {
            kernels::im2col(&xd[s * sample..(s + 1) * sample], &g, &mut cols);
            kernels::matmul(wd, &cols, o, plen, spatial, &mut out[s * o * spatial..(s + 1) * o * spatial]);
        }
        let rg = self.rg(x) || self.rg(w);
        self.push(Tensor::new(vec![n, o, oh, ow], out)?, Op::Conv2d { x, w, stride, pad }, rg)
    }

    /// Non-overlapping `k×k` average pooling; trailing rows/cols that do not
    /// fill a window are dropped.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 4 || k == 0 || sx[2] < k || sx[3] < k {
            return Err(Error::shape("avg_pool2d", format!("input {sx:?}, window {k}")));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h / k, w / k);
        let inv = T::ONE / T::from_usize(k * k);
        let xd = self.value(x).data();
        let mut out = vec![T::ZERO; n * c * oh * ow];
        for p in 0..n * c {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::ZERO;
                    for dy in 0..k {
                        for dx in 0..k {
                            s += plane[(oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    dst[oy * ow + ox] = s * inv;
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, c, oh, ow], out)?, Op::AvgPool2d(x, k), rg)
    }

    /// `N×C×H×W` → `N×C` by averaging each channel plane.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("input {sx:?}")));
        }
        let plane = sx[2] * sx[3];
        let inv = T::ONE / T::from_usize(plane);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![sx[0], sx[1]], out)?, Op::GlobalAvgPool(x), rg)
    }

    /// Mean cross-entropy of `softmax(logits)` against (optionally smoothed)
    /// one-hot targets. With smoothing ε the target is `(1-ε)·onehot + ε/K`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let sl = self.value(logits).shape().to_vec();
        if sl.len() != 2 || sl[0] != targets.len() || sl[0] == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {sl:?} vs {} labels", targets.len()),
            ));
        }
        let (m, k) = (sl[0], sl[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::shape("softmax_cross_entropy", format!("label {bad} outside [0, {k})")));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!("label smoothing {smoothing} not in [0, 1)")));
        }
        let on = T::from_f64(1.0 - smoothing);
        let off = T::from_f64(smoothing / k as f64);
        let ld = self.value(logits).data();
        let mut probs = vec![T::ZERO; m * k];
        let mut total = T::ZERO;
        for (i, row) in ld.chunks(k).enumerate() {
            let mx = row.iter().copied().fold(row[0], T::max);
            let mut z = T::ZERO;
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - mx).exp();
                z += *p;
            }
            let lse = mx + z.ln();
            let inv = T::ONE / z;
            probs[i * k..(i + 1) * k].iter_mut().for_each(|p| *p *= inv);
            let nll_true = lse - row[targets[i]];
            let mut loss = on * nll_true;
            if smoothing > 0.0 {
                let sum_nll: T = row.iter().map(|&v| lse - v).sum();
                loss += off * sum_nll;
            }
            total += loss;
        }
        let mean = total / T::from_usize(m);
        let rg = self.rg(logits);
        let v = self.push(
            Tensor::scalar(mean),
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), smoothing },
            rg,
        )?;
        self.nodes[v.0].aux = Some(probs);
        Ok(v)
    }

    /// Propagates d(loss)/d(node) from a scalar `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.value(loss).shape())));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(shapes[loss.0].clone(), vec![T::ONE])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let name = node.op.name();
            let emit = |v: Var, t: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| -> Result<()> {
                if self.rg(v) {
                    check(name, &t)?;
                    add_into(&mut grads[v.0], t);
                }
                Ok(())
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.rg(*a) {
                        let mut da = vec![T::ZERO; m * k];
                        kernels::matmul_nt_acc(g.data(), tb.data(), m, n, k, &mut da);
                        emit(*a, Tensor::new(vec![m, k], da)?, &mut grads)?;
                    }
                    if self.rg(*b) {
                        let mut db = vec![T::ZERO; k * n];
                        kernels::matmul_tn_acc(ta.data(), g.data(), m, k, n, &mut db);
                        emit(*b, Tensor::new(vec![k, n], db)?, &mut grads)?;
                    }
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let n = shapes[b.0][0];
                        let mut db = vec![T::ZERO; n];
                        for row in g.data().chunks(n) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        emit(*b, Tensor::new(vec![n], db)?, &mut grads)?;
                    }
                    emit(*x, g, &mut grads)?;
                }
                Op::AddChannelBias(x, b) => {
                    if self.rg(*b) {
                        let s = &shapes[x.0];
                        let (c, plane) = (s[1], s[2] * s[3]);
                        let mut db = vec![T::ZERO; c];
                        for (j, chunk) in g.data().chunks(plane).enumerate() {
                            db[j % c] += chunk.iter().copied().sum::<T>();
                        }
                        emit(*b, Tensor::new(vec![c], db)?, &mut grads)?;
                    }
                    emit(*x, g, &mut grads)?;
                }
                Op::Add(a, b) => {
                    emit(*a, g.clone(), &mut grads)?;
                    emit(*b, g, &mut grads)?;
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da: Vec<T> = g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    let db: Vec<T> = g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    emit(*a, Tensor::new(shapes[a.0].clone(), da)?, &mut grads)?;
                    emit(*b, Tensor::new(shapes[b.0].clone(), db)?, &mut grads)?;
                }
                Op::Scale(a, c) => {
                    let cs = T::from_f64(*c);
                    emit(*a, g.map(|v| v * cs), &mut grads)?;
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    let n = shapes[a.0].iter().product();
                    emit(*a, Tensor::new(shapes[a.0].clone(), vec![gv; n])?, &mut grads)?;
                }
                Op::Reshape(a) => {
                    emit(*a, g.reshape(shapes[a.0].clone())?, &mut grads)?;
                }
                Op::Relu(a) => {
                    let gate = node.aux.as_ref().expect("relu node keeps its gate");
                    let d: Vec<T> = g.data().iter().zip(gate).map(|(&gv, &m)| gv * m).collect();
                    emit(*a, Tensor::new(shapes[a.0].clone(), d)?, &mut grads)?;
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let d: Vec<T> = g.data().iter().zip(y).map(|(&gv, &yv)| gv * (T::ONE - yv * yv)).collect();
                    emit(*a, Tensor::new(shapes[a.0].clone(), d)?, &mut grads)?;
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let d: Vec<T> = g.data().iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::ONE - yv)).collect();
                    emit(*a, Tensor::new(shapes[a.0].clone(), d)?, &mut grads)?;
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let (sx, sw) = (&shapes[x.0], &shapes[w.0]);
                    let geom = ConvGeom {
                        channels: sx[1],
                        height: sx[2],
                        width: sx[3],
                        kernel_h: sw[2],
                        kernel_w: sw[3],
                        stride: *stride,
                        pad: *pad,
                    };
                    let (n, o) = (sx[0], sw[0]);
                    let spatial = geom.out_h() * geom.out_w();
                    let plen = geom.patch_len();
                    let sample = geom.channels * geom.height * geom.width;
                    let xd = self.value(*x).data();
                    let wd = self.value(*w).data();
                    let (need_x, need_w) = (self.rg(*x), self.rg(*w));
                    let mut dw = vec![T::ZERO; if need_w { o * plen } else { 0 }];
                    let mut dx = vec![T::ZERO; if need_x { n * sample } else { 0 }];
                    let mut cols = vec![T::ZERO; plen * spatial];
                    let mut dcols = vec![T::ZERO; plen * spatial];
                    for s in 0..n {
                        let gs = &g.data()[s * o * spatial..(s + 1) * o * spatial];
                        if need_w {
                            kernels::im2col(&xd[s * sample..(s + 1) * sample], &geom, &mut cols);
                            kernels::matmul_nt_acc(gs, &cols, o, spatial, plen, &mut dw);
                        }
                        if need_x {
                            dcols.iter_mut().for_each(|v| *v = T::ZERO);
                            kernels::matmul_tn_acc(wd, gs, o, plen, spatial, &mut dcols);
                            kernels::col2im_acc(&dcols, &geom, &mut dx[s * sample..(s + 1) * sample]);
                        }
                    }
                    if need_w {
                        emit(*w, Tensor::new(sw.clone(), dw)?, &mut grads)?;
                    }
                    if need_x {
                        emit(*x, Tensor::new(sx.clone(), dx)?, &mut grads)?;
                    }
                }
                Op::AvgPool2d(x, k) => {
                    let sx = &shapes[x.0];
                    let (h, w) = (sx[2], sx[3]);
                    let (oh, ow) = (h / k, w / k);
                    let inv = T::ONE / T::from_usize(k * k);
                    let mut dx = vec![T::ZERO; sx.iter().product()];
                    for p in 0..sx[0] * sx[1] {
                        let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                        let plane = &mut dx[p * h * w..(p + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let v = src[oy * ow + ox] * inv;
                                for dy in 0..*k {
                                    for ddx in 0..*k {
                                        plane[(oy * k + dy) * w + ox * k + ddx] += v;
                                    }
                                }
                            }
                        }
                    }
                    emit(*x, Tensor::new(sx.clone(), dx)?, &mut grads)?;
                }
                Op::GlobalAvgPool(x) => {
                    let sx = &shapes[x.0];
                    let plane = sx[2] * sx[3];
                    let inv = T::ONE / T::from_usize(plane);
                    let mut dx = Vec::with_capacity(sx.iter().product());
                    for &gv in g.data() {
                        dx.extend(std::iter::repeat(gv * inv).take(plane));
                    }
                    emit(*x, Tensor::new(sx.clone(), dx)?, &mut grads)?;
                }
                Op::SoftmaxCrossEntropy { logits, targets, smoothing } => {
                    let probs = node.aux.as_ref().expect("cross-entropy node keeps its probabilities");
                    let s = &shapes[logits.0];
                    let (m, k) = (s[0], s[1]);
                    let scale = g.data()[0] / T::from_usize(m);
                    let on = T::from_f64(1.0 - smoothing);
                    let off = T::from_f64(smoothing / k as f64);
                    let mut d = Vec::with_capacity(m * k);
                    for (i, row) in probs.chunks(k).enumerate() {
                        for (j, &p) in row.iter().enumerate() {
                            let t = if j == targets[i] { on + off } else { off };
                            d.push((p - t) * scale);
                        }
                    }
                    emit(*logits, Tensor::new(s.clone(), d)?, &mut grads)?;
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}
