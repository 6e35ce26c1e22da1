//! Dense reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every op appends a node holding its forward value,
//! so node order is already a topological order and [`Graph::backward`] is a
//! single reverse sweep. Graphs are cheap and meant to be rebuilt per batch.
//!
//! Elementwise binary ops accept either equal shapes or one single-element
//! operand, which is broadcast. Row-wise bias addition has its own op.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound applied before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    LogClamped,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Unary(Unary, NodeId),
    Softmax(NodeId),
    RowSum(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    WeightedSum(NodeId, Vec<f64>),
    GradReverse(NodeId, f64),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Unary(_, a)
            | Op::Softmax(a)
            | Op::RowSum(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GradReverse(a, _) => vec![a],
            Op::WeightedSum(a, _) => vec![a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        let grad = Tensor::zeros(value.shape().to_vec());
        self.nodes.push(Node {
            op,
            value,
            grad,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", av.shape(), bv.shape()),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    /// Adds a `[1, n]` (or `[n]`) bias to every row of a `[B, n]` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        if xv.rank() != 2 || bv.len() != n {
            return Err(Error::Shape {
                op: "add_bias",
                detail: format!("{:?} + {:?}", xv.shape(), bv.shape()),
            });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(Op::AddBias(x, bias), out, "add_bias")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), value, "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), value, "mul")
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| k * x);
        self.push(Op::Scale(a, k), value, "scale")
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let one = self.constant(Tensor::scalar(1.0));
        let neg = self.neg(a)?;
        self.add(one, neg)
    }

    pub fn unary(&mut self, kind: Unary, a: NodeId) -> Result<NodeId> {
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |x| x.max(0.0),
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Exp => f64::exp,
            Unary::LogClamped => |x| x.max(LOG_FLOOR).ln(),
        };
        let value = self.value(a).map(f);
        let name = match kind {
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::LogClamped => "log_clamped",
        };
        self.push(Op::Unary(kind, a), value, name)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Unary::Relu, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Unary::Exp, a)
    }

    pub fn log_clamped(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(Unary::LogClamped, a)
    }

    /// Row-wise softmax of a `[B, K]` matrix, K >= 2.
    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        let v = self.value(logits);
        if v.rank() != 2 || v.cols() < 2 {
            return Err(Error::Shape {
                op: "softmax",
                detail: format!("need [B, K] with K >= 2, got {:?}", v.shape()),
            });
        }
        if !v.all_finite() {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let mut out = v.clone();
        let k = v.cols();
        for row in out.data_mut().chunks_mut(k) {
            softmax_in_place(row);
        }
        self.push(Op::Softmax(logits), out, "softmax")
    }

    /// Sums each row of a `[B, K]` matrix into a `[B]` vector.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.rank() != 2 {
            return Err(Error::Shape {
                op: "row_sum",
                detail: format!("need a matrix, got {:?}", v.shape()),
            });
        }
        let out: Vec<f64> = v.row_iter().map(|r| r.iter().sum()).collect();
        self.push(Op::RowSum(a), Tensor::vector(out), "row_sum")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Shape {
                op: "mean",
                detail: "empty input".into(),
            });
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m), "mean")
    }

    /// `Σ_i w_i x_i` over the leading dimension. The weights are constants:
    /// no gradient flows into them.
    pub fn weighted_sum(&mut self, a: NodeId, weights: &[f64]) -> Result<NodeId> {
        let v = self.value(a);
        if v.rows() != weights.len() || v.cols() != 1 {
            return Err(Error::Shape {
                op: "weighted_sum",
                detail: format!("{:?} against {} weights", v.shape(), weights.len()),
            });
        }
        let s = v.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        self.push(Op::WeightedSum(a, weights.to_vec()), Tensor::scalar(s), "weighted_sum")
    }

    /// Identity on the forward pass; multiplies the upstream gradient by
    /// `-scale` on the backward pass.
    pub fn grad_reverse(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "gradient reversal scale must be positive, got {scale}"
            )));
        }
        let value = self.value(a).clone();
        self.push(Op::GradReverse(a, scale), value, "grad_reverse")
    }

    fn binary(&self, a: NodeId, b: NodeId, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape().to_vec(), data)
        } else if bv.is_scalar() {
            let y = bv.data()[0];
            Ok(av.map(|x| f(x, y)))
        } else if av.is_scalar() {
            let x = av.data()[0];
            Ok(bv.map(|y| f(x, y)))
        } else {
            Err(Error::Broadcast {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            })
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients are reset first, so
    /// calling this twice gives identical results.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NotScalar(shape));
        }
        self.zero_grad();
        self.nodes[loss.0].grad.fill(1.0);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let upstream = std::mem::replace(&mut self.nodes[i].grad, Tensor::zeros(vec![0]));
            if upstream.data().iter().any(|&g| g != 0.0) {
                self.propagate(i, &upstream);
            }
            self.nodes[i].grad = upstream;
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: &Tensor) {
        let node = &mut self.nodes[id.0];
        if node.requires_grad {
            node.grad.add_assign(contribution);
        }
    }

    /// Adds the contribution for an operand that may have been broadcast
    /// from a single element.
    fn accumulate_broadcast(&mut self, id: NodeId, contribution: Tensor) {
        if self.nodes[id.0].value.len() == contribution.len() {
            self.accumulate(id, &contribution);
        } else {
            let total: f64 = contribution.data().iter().sum();
            let shape = self.nodes[id.0].value.shape().to_vec();
            self.accumulate(id, &Tensor::filled(shape, total));
        }
    }

    fn propagate(&mut self, i: usize, up: &Tensor) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    let bt = transpose_raw(bv.data(), k, n);
                    let da = matmul_raw(up.data(), &bt, m, n, k);
                    let da = Tensor::new(vec![m, k], da).expect("matmul grad shape");
                    self.accumulate(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let av = &self.nodes[a.0].value;
                    let at = transpose_raw(av.data(), m, k);
                    let db = matmul_raw(&at, up.data(), k, m, n);
                    let db = Tensor::new(vec![k, n], db).expect("matmul grad shape");
                    self.accumulate(b, &db);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(x, up);
                let n = up.cols();
                let mut db = vec![0.0; n];
                for row in up.row_iter() {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                let shape = self.nodes[bias.0].value.shape().to_vec();
                self.accumulate(bias, &Tensor::new(shape, db).expect("bias grad shape"));
            }
            Op::Add(a, b) => {
                self.accumulate_broadcast(a, up.clone());
                self.accumulate_broadcast(b, up.clone());
            }
            Op::Mul(a, b) => {
                let bv = self.nodes[b.0].value.clone();
                let av = self.nodes[a.0].value.clone();
                let da = scaled_by(up, &bv);
                let db = scaled_by(up, &av);
                self.accumulate_broadcast(a, da);
                self.accumulate_broadcast(b, db);
            }
            Op::Scale(a, k) => {
                self.accumulate(a, &up.map(|g| k * g));
            }
            Op::Unary(kind, a) => {
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[i].value;
                let data: Vec<f64> = up
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&g, (&x, &y))| {
                        g * match kind {
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Tanh => 1.0 - y * y,
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::Exp => y,
                            Unary::LogClamped => {
                                if x > LOG_FLOOR {
                                    1.0 / x
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                let d = Tensor::new(x.shape().to_vec(), data).expect("unary grad shape");
                self.accumulate(a, &d);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let k = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.row_iter().zip(up.data().chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                let d = Tensor::new(y.shape().to_vec(), d).expect("softmax grad shape");
                self.accumulate(a, &d);
            }
            Op::RowSum(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let k = shape[1];
                let d: Vec<f64> = up.data().iter().flat_map(|&g| std::iter::repeat_n(g, k)).collect();
                self.accumulate(a, &Tensor::new(shape, d).expect("row_sum grad shape"));
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accumulate(a, &Tensor::filled(shape, up.data()[0]));
            }
            Op::Mean(a) => {
                let v = &self.nodes[a.0].value;
                let g = up.data()[0] / v.len() as f64;
                let shape = v.shape().to_vec();
                self.accumulate(a, &Tensor::filled(shape, g));
            }
            Op::WeightedSum(a, w) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let g = up.data()[0];
                let d = w.iter().map(|wi| wi * g).collect();
                self.accumulate(a, &Tensor::new(shape, d).expect("weighted_sum grad shape"));
            }
            Op::GradReverse(a, scale) => {
                self.accumulate(a, &up.map(|g| -scale * g));
            }
        }
    }
}

fn scaled_by(up: &Tensor, other: &Tensor) -> Tensor {
    if other.len() == up.len() {
        let data = up.data().iter().zip(other.data()).map(|(g, o)| g * o).collect();
        Tensor::new(up.shape().to_vec(), data).expect("mul grad shape")
    } else {
        let o = other.data()[0];
        up.map(|g| g * o)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
