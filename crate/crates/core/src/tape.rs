//! Tape-based reverse mode and the tape-free backend.
//!
//! Model and loss code is written once against [`Graph`]. [`Tape`] records
//! every operation so [`Tape::backward`] can replay it in reverse;
//! [`Eager`] evaluates the same kernels and records nothing, which is how
//! the image-free contrast pass runs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, LayerNormCache};
use crate::tensor::Tensor;

/// Position of a node on its tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(NodeId);

impl Var {
    pub fn id(self) -> NodeId {
        self.0
    }
}

/// Operations available to model and loss code.
pub trait Graph {
    type Var: Clone;

    /// Value with no gradient path.
    fn constant(&mut self, t: Tensor) -> Self::Var;
    /// Trainable leaf for parameter number `index`.
    fn param(&mut self, index: usize, t: &Tensor) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor;
    /// Value-identical copy that gradients never flow through.
    fn detach(&mut self, v: &Self::Var) -> Self::Var;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn transpose(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scale(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    fn div_scalar(&mut self, a: &Self::Var, s: &Self::Var) -> Result<Self::Var>;
    fn sum(&mut self, a: &Self::Var) -> Self::Var;
    fn clamp(&mut self, a: &Self::Var, lo: f64, hi: f64) -> Self::Var;
    fn gelu(&mut self, a: &Self::Var) -> Self::Var;
    fn log_softmax(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn masked_softmax(&mut self, a: &Self::Var, allowed: &[bool]) -> Result<Self::Var>;
    fn layer_norm(
        &mut self,
        x: &Self::Var,
        gain: &Self::Var,
        bias: &Self::Var,
        eps: f64,
    ) -> Result<Self::Var>;
    fn embedding(&mut self, table: &Self::Var, indices: &[usize]) -> Result<Self::Var>;
    fn gather_cols(&mut self, a: &Self::Var, idx: &[usize]) -> Result<Self::Var>;
    fn slice_cols(&mut self, a: &Self::Var, start: usize, width: usize) -> Result<Self::Var>;
    fn slice_rows(&mut self, a: &Self::Var, start: usize, len: usize) -> Result<Self::Var>;
    fn concat_cols(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;
    fn concat_rows(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;
    fn reshape(&mut self, a: &Self::Var, shape: &[usize]) -> Result<Self::Var>;
    fn window_mean(&mut self, a: &Self::Var, window: usize, mask: &[bool]) -> Result<Self::Var>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    DivScalar(NodeId, NodeId),
    Sum(NodeId),
    Clamp(NodeId, f64, f64),
    Gelu(NodeId),
    LogSoftmax(NodeId),
    MaskedSoftmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        cache: LayerNormCache,
    },
    Embedding(NodeId, Vec<usize>),
    GatherCols(NodeId, Vec<usize>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize),
    ConcatCols(Vec<NodeId>, Vec<usize>),
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId),
    WindowMean(NodeId, usize, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<usize>,
}

/// Ordered record of operations. Nodes are appended as they are computed,
/// so every input precedes the operation that consumes it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Trainable leaf that is not tied to a parameter index.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true, None)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0 .0].value
    }

    /// Gradient accumulated on `v` by the last [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0 .0].value.grad()
    }

    fn push_leaf(&mut self, mut t: Tensor, requires_grad: bool, param: Option<usize>) -> Var {
        let id = NodeId(self.nodes.len());
        t.set_grad(None);
        t.link(id, requires_grad);
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            param,
        });
        Var(id)
    }

    fn push(&mut self, mut t: Tensor, op: Op, inputs: &[NodeId]) -> Var {
        let id = NodeId(self.nodes.len());
        let rg = inputs.iter().any(|i| self.nodes[i.0].value.requires_grad());
        t.link(id, rg);
        self.nodes.push(Node {
            value: t,
            op,
            param: None,
        });
        Var(id)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Propagates d`loss`/d(node) to every node that requires a gradient.
    ///
    /// Gradients are reset first, so calling this twice on the same tape
    /// does not double-count. Nodes that cannot reach `loss` keep no grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = loss.0 .0;
        let lv = &self.nodes[root].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self
            .nodes
            .iter_mut()
            .zip(grads.into_iter().chain(core::iter::repeat_with(|| None)))
        {
            let g = if node.value.requires_grad() { g } else { None };
            node.value.set_grad(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |id: NodeId, contrib: Vec<f64>| {
            if !self.nodes[id.0].value.requires_grad() {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(&contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ga, gb) = ops::matmul_backward(self.val(*a), self.val(*b), g);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Transpose(a) => {
                let (m, n) = (out.shape()[0], out.shape()[1]);
                acc(*a, ops::transpose_data(g, m, n));
            }
            Op::Add(a, b) => {
                let (ga, gb) = ops::add_backward(self.val(*b), g);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Sub(a, b) => {
                let (ga, gb) = ops::sub_backward(self.val(*b), g);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Mul(a, b) => {
                let (ga, gb) = ops::mul_backward(self.val(*a), self.val(*b), g);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|v| v * c).collect()),
            Op::DivScalar(a, s) => {
                let (ga, gs) = ops::div_scalar_backward(self.val(*a), self.val(*s), g);
                acc(*a, ga);
                acc(*s, vec![gs]);
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.val(*a).numel()]),
            Op::Clamp(a, lo, hi) => acc(*a, ops::clamp_backward(self.val(*a), *lo, *hi, g)),
            Op::Gelu(a) => acc(*a, ops::gelu_backward(self.val(*a), g)),
            Op::LogSoftmax(a) => acc(*a, ops::log_softmax_backward(out, g)),
            Op::MaskedSoftmax(a) => acc(*a, ops::softmax_backward(out, g)),
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let (gx, ggain, gbias) = ops::layer_norm_backward(self.val(*gain), cache, g);
                acc(*x, gx);
                acc(*gain, ggain);
                acc(*bias, gbias);
            }
            Op::Embedding(t, idx) => acc(*t, ops::embedding_backward(self.val(*t), idx, g)),
            Op::GatherCols(a, idx) => acc(*a, ops::gather_cols_backward(self.val(*a), idx, g)),
            Op::SliceCols(a, start, width) => acc(
                *a,
                ops::slice_cols_backward(self.val(*a), *start, *width, g),
            ),
            Op::SliceRows(a, start) => acc(*a, ops::slice_rows_backward(self.val(*a), *start, g)),
            Op::ConcatCols(parts, widths) => {
                for (p, gp) in parts.iter().zip(ops::concat_cols_backward(widths, g)) {
                    acc(*p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.val(*p).numel();
                    acc(*p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::WindowMean(a, window, mask) => acc(*a, ops::window_mean_backward(*window, mask, g)),
        }
    }

    /// Sums the gradients of every leaf registered for each parameter index.
    pub fn param_grads(&self, n_params: usize) -> Vec<Option<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = vec![None; n_params];
        for node in &self.nodes {
            let (Some(p), Some(g)) = (node.param, node.value.grad()) else {
                continue;
            };
            match &mut out[p] {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(g) {
                        *e += v;
                    }
                }
                slot @ None => *slot = Some(g.to_vec()),
            }
        }
        out
    }
}

impl Graph for Tape {
    type Var = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false, None)
    }

    fn param(&mut self, index: usize, t: &Tensor) -> Var {
        self.push_leaf(t.detached(), true, Some(index))
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.tensor(*v)
    }

    fn detach(&mut self, v: &Var) -> Var {
        let t = self.tensor(*v).detached();
        self.push_leaf(t, false, None)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let t = ops::matmul(self.val(a.0), self.val(b.0))?;
        Ok(self.push(t, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let t = ops::transpose(self.val(a.0))?;
        Ok(self.push(t, Op::Transpose(a.0), &[a.0]))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let t = ops::add(self.val(a.0), self.val(b.0))?;
        Ok(self.push(t, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let t = ops::sub(self.val(a.0), self.val(b.0))?;
        Ok(self.push(t, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let t = ops::mul(self.val(a.0), self.val(b.0))?;
        Ok(self.push(t, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let t = ops::scale(self.val(a.0), c);
        self.push(t, Op::Scale(a.0, c), &[a.0])
    }

    fn div_scalar(&mut self, a: &Var, s: &Var) -> Result<Var> {
        let t = ops::div_scalar(self.val(a.0), self.val(s.0))?;
        Ok(self.push(t, Op::DivScalar(a.0, s.0), &[a.0, s.0]))
    }

    fn sum(&mut self, a: &Var) -> Var {
        let t = ops::sum(self.val(a.0));
        self.push(t, Op::Sum(a.0), &[a.0])
    }

    fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let t = ops::clamp(self.val(a.0), lo, hi);
        self.push(t, Op::Clamp(a.0, lo, hi), &[a.0])
    }

    fn gelu(&mut self, a: &Var) -> Var {
        let t = ops::gelu(self.val(a.0));
        self.push(t, Op::Gelu(a.0), &[a.0])
    }

    fn log_softmax(&mut self, a: &Var) -> Result<Var> {
        let t = ops::log_softmax(self.val(a.0))?;
        Ok(self.push(t, Op::LogSoftmax(a.0), &[a.0]))
    }

    fn masked_softmax(&mut self, a: &Var, allowed: &[bool]) -> Result<Var> {
        let t = ops::masked_softmax(self.val(a.0), allowed)?;
        Ok(self.push(t, Op::MaskedSoftmax(a.0), &[a.0]))
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let (t, cache) = ops::layer_norm(self.val(x.0), self.val(gain.0), self.val(bias.0), eps)?;
        let op = Op::LayerNorm {
            x: x.0,
            gain: gain.0,
            bias: bias.0,
            cache,
        };
        Ok(self.push(t, op, &[x.0, gain.0, bias.0]))
    }

    fn embedding(&mut self, table: &Var, indices: &[usize]) -> Result<Var> {
        let t = ops::embedding(self.val(table.0), indices)?;
        Ok(self.push(t, Op::Embedding(table.0, indices.to_vec()), &[table.0]))
    }

    fn gather_cols(&mut self, a: &Var, idx: &[usize]) -> Result<Var> {
        let t = ops::gather_cols(self.val(a.0), idx)?;
        Ok(self.push(t, Op::GatherCols(a.0, idx.to_vec()), &[a.0]))
    }

    fn slice_cols(&mut self, a: &Var, start: usize, width: usize) -> Result<Var> {
        let t = ops::slice_cols(self.val(a.0), start, width)?;
        Ok(self.push(t, Op::SliceCols(a.0, start, width), &[a.0]))
    }

    fn slice_rows(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let t = ops::slice_rows(self.val(a.0), start, len)?;
        Ok(self.push(t, Op::SliceRows(a.0, start), &[a.0]))
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(p.0)).collect();
        let t = ops::concat_cols(&refs)?;
        let widths = refs.iter().map(|r| r.last_dim()).collect();
        let ids: Vec<NodeId> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(t, Op::ConcatCols(ids.clone(), widths), &ids))
    }

    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(p.0)).collect();
        let t = ops::concat_rows(&refs)?;
        let ids: Vec<NodeId> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(t, Op::ConcatRows(ids.clone()), &ids))
    }

    fn reshape(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(a.0).detached().with_shape(shape)?;
        Ok(self.push(t, Op::Reshape(a.0), &[a.0]))
    }

    fn window_mean(&mut self, a: &Var, window: usize, mask: &[bool]) -> Result<Var> {
        let data = ops::window_mean(self.val(a.0).data(), window, mask)?;
        let t = Tensor::from_parts(self.val(a.0).shape().to_vec(), data);
        Ok(self.push(t, Op::WindowMean(a.0, window, mask.to_vec()), &[a.0]))
    }
}

/// Tape-free backend: runs the forward kernels and records nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Var = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t.detached()
    }

    fn param(&mut self, _index: usize, t: &Tensor) -> Tensor {
        t.detached()
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn detach(&mut self, v: &Tensor) -> Tensor {
        v.detached()
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::matmul(a, b)
    }

    fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        ops::transpose(a)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::add(a, b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::sub(a, b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::mul(a, b)
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        ops::scale(a, c)
    }

    fn div_scalar(&mut self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        ops::div_scalar(a, s)
    }

    fn sum(&mut self, a: &Tensor) -> Tensor {
        ops::sum(a)
    }

    fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        ops::clamp(a, lo, hi)
    }

    fn gelu(&mut self, a: &Tensor) -> Tensor {
        ops::gelu(a)
    }

    fn log_softmax(&mut self, a: &Tensor) -> Result<Tensor> {
        ops::log_softmax(a)
    }

    fn masked_softmax(&mut self, a: &Tensor, allowed: &[bool]) -> Result<Tensor> {
        ops::masked_softmax(a, allowed)
    }

    fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        ops::layer_norm(x, gain, bias, eps).map(|(t, _)| t)
    }

    fn embedding(&mut self, table: &Tensor, indices: &[usize]) -> Result<Tensor> {
        ops::embedding(table, indices)
    }

    fn gather_cols(&mut self, a: &Tensor, idx: &[usize]) -> Result<Tensor> {
        ops::gather_cols(a, idx)
    }

    fn slice_cols(&mut self, a: &Tensor, start: usize, width: usize) -> Result<Tensor> {
        ops::slice_cols(a, start, width)
    }

    fn slice_rows(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        ops::slice_rows(a, start, len)
    }

    fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        ops::concat_cols(&refs)
    }

    fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        ops::concat_rows(&refs)
    }

    fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        a.detached().with_shape(shape)
    }

    fn window_mean(&mut self, a: &Tensor, window: usize, mask: &[bool]) -> Result<Tensor> {
        let data = ops::window_mean(a.data(), window, mask)?;
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let loss = tape.sum(&x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_scaled_loss_gives_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let z = tape.scale(&x, 0.0);
        let loss = tape.sum(&z);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaves_keep_no_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0]));
        let y = tape.leaf(Tensor::vector(vec![2.0]));
        let loss = tape.sum(&x);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_some());
        assert!(tape.grad(y).is_none());
    }

    #[test]
    fn detach_blocks_gradient_and_keeps_value() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.5, -0.5]));
        let d = tape.detach(&x);
        assert_eq!(tape.tensor(d).data(), tape.tensor(x).data());
        assert!(!tape.tensor(d).requires_grad());
        let prod = tape.mul(&x, &d).unwrap();
        let loss = tape.sum(&prod);
        tape.backward(loss).unwrap();
        // d(x * stopgrad(x))/dx = stopgrad(x)
        assert_eq!(tape.grad(x).unwrap(), [1.5, -0.5]);
        assert!(tape.grad(d).is_none());
    }

    #[test]
    fn loss_from_detached_only_leaves_params_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param(0, &Tensor::vector(vec![0.3, 0.7]));
        let d = tape.detach(&w);
        let sq = tape.mul(&d, &d).unwrap();
        let loss = tape.sum(&sq);
        tape.backward(loss).unwrap();
        assert!(!tape.tensor(loss).requires_grad());
        let grads = tape.param_grads(1);
        assert!(grads[0]
            .as_ref()
            .is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_twice_does_not_accumulate() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![2.0]));
        let y = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&y);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), [4.0]);
    }

    #[test]
    fn shared_param_leaves_sum() {
        let mut tape = Tape::new();
        let t = Tensor::vector(vec![1.0, 1.0]);
        let a = tape.param(0, &t);
        let b = tape.param(0, &t);
        let s = tape.add(&a, &b).unwrap();
        let loss = tape.sum(&s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grads(1)[0].as_deref().unwrap(), [2.0, 2.0]);
    }
}
