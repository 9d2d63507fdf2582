//! The recording tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.
//! Gradients of intermediate nodes live only for the duration of one
//! [`Tape::backward`] call; leaf gradients persist and accumulate across
//! calls until [`Tape::zero_grad`].

use super::kernels::{self, ConvGeometry, View};
use super::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Relu(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    Tile(Var),
    Im2Col(Var, ConvGeometry),
    MaxPool(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// An append-only record of tensor operations.
///
/// A tape is single-writer: build one per forward/backward step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Gradient buffer of `v`, or None when `v` needs no gradient.
fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
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

    /// Registers a tensor whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Matrix product over a shared leading batch axis: `[g,m,k] · [g,k,n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (g, m, k, n) = kernels::batch_matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; g * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..g {
            kernels::gemm(
                m,
                k,
                n,
                View::row_major(&av[i * m * k..(i + 1) * m * k], k),
                View::row_major(&bv[i * k * n..(i + 1) * k * n], n),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let value = Tensor::new(&[g, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul(a, b), &[a, b]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.value(a).rank();
        let mut seen = axes.to_vec();
        seen.sort_unstable();
        if seen != (0..rank).collect::<Vec<_>>() {
            return Err(shape_err("permute", self.shape(a), axes));
        }
        let value = kernels::permute(self.value(a), axes);
        Ok(self.push(value, Op::Permute(a, axes.to_vec()), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.value(a).rank();
        if rank < 2 {
            return Err(TensorError::Axis {
                axis: 1,
                shape: self.shape(a).to_vec(),
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |p, q| p + q)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a vector along the trailing axis of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let width = *x.shape().last().unwrap_or(&0);
        if b.len() != width || b.rank() != 1 {
            return Err(shape_err("add_bias", x.shape(), b.shape()));
        }
        let mut value = x.clone();
        for row in value.data_mut().chunks_mut(width.max(1)) {
            add_into(row, b.data());
        }
        Ok(self.push(value, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(kernels::gelu);
        self.push(value, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(TensorError::Axis {
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let value = kernels::softmax(x, axis);
        Ok(self.push(value, Op::Softmax(a, axis), &[a]))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv.shape().last().unwrap_or(&0);
        for p in [gain, bias] {
            let pv = self.value(p);
            if pv.rank() != 1 || pv.len() != width {
                return Err(shape_err("layer_norm", xv.shape(), pv.shape()));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / width.max(1);
        let mut normalized = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(width.max(1)) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let n = (v - mean) * r;
                normalized.push(n);
                out.push(n * g[j] + b[j]);
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = match lv.shape() {
            &[r, c] if r == labels.len() => (r, c),
            s => return Err(shape_err("cross_entropy", s, &[labels.len()])),
        };
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(TensorError::Label { row, label, classes });
        }
        let probs = kernels::softmax(lv, 1).into_data();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| {
                let row = &lv.data()[r * classes..(r + 1) * classes];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[l]
            })
            .sum::<f64>()
            / rows as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// Joins two tensors along `axis`; all other axes must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let compatible = x.rank() == y.rank()
            && axis < x.rank()
            && x.shape()
                .iter()
                .zip(y.shape())
                .enumerate()
                .all(|(i, (p, q))| i == axis || p == q);
        if !compatible {
            return Err(shape_err("concat", x.shape(), y.shape()));
        }
        let (outer, la, inner) = kernels::axis_extents(x.shape(), axis);
        let lb = y.shape()[axis];
        let mut data = Vec::with_capacity(x.len() + y.len());
        for o in 0..outer {
            data.extend_from_slice(&x.data()[o * la * inner..(o + 1) * la * inner]);
            data.extend_from_slice(&y.data()[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = la + lb;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Concat { a, b, axis }, &[a, b]))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(TensorError::Axis {
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let (outer, full, inner) = kernels::axis_extents(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Narrow { a, axis, start }, &[a]))
    }

    /// Stacks `times` copies of `a` along a new leading axis.
    pub fn tile(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let mut shape = vec![times];
        shape.extend_from_slice(x.shape());
        let value = Tensor {
            shape,
            data: x.data().repeat(times),
        };
        self.push(value, Op::Tile(a), &[a])
    }

    /// Unfolds `k × k` same-padded neighbourhoods of an NHWC batch into rows.
    ///
    /// The result has one row per output pixel and `k·k·C` columns ordered
    /// (kernel row, kernel column, channel).
    pub fn im2col(&mut self, a: Var, kernel: usize) -> Result<Var> {
        let x = self.value(a);
        let &[batch, height, width, channels] = x.shape() else {
            return Err(shape_err("im2col", x.shape(), &[kernel]));
        };
        if kernel.is_multiple_of(2) {
            return Err(shape_err("im2col", x.shape(), &[kernel]));
        }
        let geom = ConvGeometry {
            batch,
            height,
            width,
            channels,
            kernel,
        };
        let cols = geom.cols();
        let mut out = vec![0.0; batch * height * width * cols];
        let src = x.data();
        geom.for_each_tap(|row, col, off| out[row * cols + col] = src[off]);
        let value = Tensor::new(&[batch * height * width, cols], out)?;
        Ok(self.push(value, Op::Im2Col(a, geom), &[a]))
    }

    /// 2×2 max pooling with stride 2 over an NHWC batch; odd edges are dropped.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let &[batch, height, width, channels] = x.shape() else {
            return Err(shape_err("max_pool2", x.shape(), &[2, 2]));
        };
        let (oh, ow) = (height / 2, width / 2);
        let src = x.data();
        let mut out = Vec::with_capacity(batch * oh * ow * channels);
        let mut argmax = Vec::with_capacity(out.capacity());
        for b in 0..batch {
            for y in 0..oh {
                for xx in 0..ow {
                    for c in 0..channels {
                        let mut best = usize::MAX;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let off = ((b * height + 2 * y + dy) * width + 2 * xx + dx) * channels + c;
                            if best == usize::MAX || src[off] > src[best] {
                                best = off;
                            }
                        }
                        out.push(src[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::new(&[batch, oh, ow, channels], out)?;
        Ok(self.push(value, Op::MaxPool(a, argmax), &[a]))
    }

    /// Back-propagates from a scalar `root`, accumulating into leaf gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(existing) => add_into(existing.data_mut(), &g),
                    None => node.grad = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves are handled by backward"),
            &Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                if let Some(da) = slot(nodes, grads, a) {
                    kernels::gemm(
                        m,
                        n,
                        k,
                        View::row_major(g, n),
                        View::transposed(val(b).data(), n),
                        da,
                        1.0,
                    );
                }
                if let Some(db) = slot(nodes, grads, b) {
                    kernels::gemm(
                        k,
                        m,
                        n,
                        View::transposed(val(a).data(), k),
                        View::row_major(g, n),
                        db,
                        1.0,
                    );
                }
            }
            &Op::BatchMatMul(a, b) => {
                let (bs, m, k) = (val(a).shape()[0], val(a).shape()[1], val(a).shape()[2]);
                let n = val(b).shape()[2];
                if let Some(da) = slot(nodes, grads, a) {
                    for p in 0..bs {
                        let bp = &val(b).data()[p * k * n..(p + 1) * k * n];
                        let gp = &g[p * m * n..(p + 1) * m * n];
                        let dp = &mut da[p * m * k..(p + 1) * m * k];
                        kernels::gemm(m, n, k, View::row_major(gp, n), View::transposed(bp, n), dp, 1.0);
                    }
                }
                if let Some(db) = slot(nodes, grads, b) {
                    for p in 0..bs {
                        let ap = &val(a).data()[p * m * k..(p + 1) * m * k];
                        let gp = &g[p * m * n..(p + 1) * m * n];
                        let dp = &mut db[p * k * n..(p + 1) * k * n];
                        kernels::gemm(k, m, n, View::transposed(ap, k), View::row_major(gp, n), dp, 1.0);
                    }
                }
            }
            Op::Permute(a, axes) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    let gt = Tensor {
                        shape: out.shape().to_vec(),
                        data: g.to_vec(),
                    };
                    add_into(da, kernels::permute(&gt, &kernels::inverse_axes(axes)).data());
                }
            }
            &Op::Reshape(a) | &Op::AddScalar(a) => {
                if let Some(da) = slot(nodes, grads, a) {
                    add_into(da, g);
                }
            }
            &Op::Add(a, b) => {
                if let Some(da) = slot(nodes, grads, a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(nodes, grads, b) {
                    add_into(db, g);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(da) = slot(nodes, grads, a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(nodes, grads, b) {
                    db.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            &Op::Mul(a, b) => {
                if let Some(da) = slot(nodes, grads, a) {
                    da.iter_mut()
                        .zip(g.iter().zip(val(b).data()))
                        .for_each(|(d, (s, y))| *d += s * y);
                }
                if let Some(db) = slot(nodes, grads, b) {
                    db.iter_mut()
                        .zip(g.iter().zip(val(a).data()))
                        .for_each(|(d, (s, x))| *d += s * x);
                }
            }
            &Op::AddBias(a, bias) => {
                if let Some(da) = slot(nodes, grads, a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(nodes, grads, bias) {
                    let width = db.len();
                    for row in g.chunks(width) {
                        add_into(db, row);
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(da) = slot(nodes, grads, a) {
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
                }
            }
            &Op::Gelu(a) => {
                if let Some(da) = slot(nodes, grads, a) {
                    da.iter_mut()
                        .zip(g.iter().zip(val(a).data()))
                        .for_each(|(d, (s, &x))| *d += s * kernels::gelu_grad(x));
                }
            }
            &Op::Relu(a) => {
                if let Some(da) = slot(nodes, grads, a) {
                    da.iter_mut().zip(g.iter().zip(val(a).data())).for_each(|(d, (s, &x))| {
                        if x > 0.0 {
                            *d += s
                        }
                    });
                }
            }
            &Op::Softmax(a, axis) => {
                if let Some(da) = slot(nodes, grads, a) {
                    let (outer, len, inner) = kernels::axis_extents(out.shape(), axis);
                    let y = out.data();
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |t: usize| (o * len + t) * inner + j;
                            let dot: f64 = (0..len).map(|t| g[at(t)] * y[at(t)]).sum();
                            for t in 0..len {
                                da[at(t)] += y[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            } => {
                let width = val(*gain).len();
                if let Some(dg) = slot(nodes, grads, *gain) {
                    for (grow, nrow) in g.chunks(width).zip(normalized.chunks(width)) {
                        dg.iter_mut()
                            .zip(grow.iter().zip(nrow))
                            .for_each(|(d, (s, n))| *d += s * n);
                    }
                }
                if let Some(db) = slot(nodes, grads, *bias) {
                    for grow in g.chunks(width) {
                        add_into(db, grow);
                    }
                }
                let gain_v = val(*gain).data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (r, (grow, nrow)) in g.chunks(width).zip(normalized.chunks(width)).enumerate() {
                        let dn: Vec<f64> = grow.iter().zip(gain_v).map(|(s, w)| s * w).collect();
                        let mean_dn = dn.iter().sum::<f64>() / width as f64;
                        let mean_dn_n = dn.iter().zip(nrow).map(|(d, n)| d * n).sum::<f64>() / width as f64;
                        let dst = &mut dx[r * width..(r + 1) * width];
                        for j in 0..width {
                            dst[j] += rstd[r] * (dn[j] - mean_dn - nrow[j] * mean_dn_n);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if let Some(dl) = slot(nodes, grads, *logits) {
                    let rows = labels.len();
                    let classes = probs.len() / rows.max(1);
                    let s = g[0] / rows as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            dl[r * classes + c] += s * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(da) = slot(nodes, grads, a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Concat { a, b, axis } => {
                let (outer, la, inner) = kernels::axis_extents(val(a).shape(), axis);
                let lb = val(b).shape()[axis];
                let stride = (la + lb) * inner;
                if let Some(da) = slot(nodes, grads, a) {
                    for o in 0..outer {
                        add_into(
                            &mut da[o * la * inner..(o + 1) * la * inner],
                            &g[o * stride..o * stride + la * inner],
                        );
                    }
                }
                if let Some(db) = slot(nodes, grads, b) {
                    for o in 0..outer {
                        add_into(
                            &mut db[o * lb * inner..(o + 1) * lb * inner],
                            &g[o * stride + la * inner..(o + 1) * stride],
                        );
                    }
                }
            }
            &Op::Narrow { a, axis, start } => {
                if let Some(da) = slot(nodes, grads, a) {
                    let (outer, full, inner) = kernels::axis_extents(val(a).shape(), axis);
                    let len = out.shape()[axis];
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        add_into(
                            &mut da[base..base + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
            }
            &Op::Tile(a) => {
                if let Some(da) = slot(nodes, grads, a) {
                    let n = da.len();
                    for chunk in g.chunks(n) {
                        add_into(da, chunk);
                    }
                }
            }
            &Op::Im2Col(a, geom) => {
                if let Some(da) = slot(nodes, grads, a) {
                    let cols = geom.cols();
                    geom.for_each_tap(|row, col, off| da[off] += g[row * cols + col]);
                }
            }
            Op::MaxPool(a, argmax) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    for (&src, &s) in argmax.iter().zip(g) {
                        da[src] += s;
                    }
                }
            }
        }
    }
}
