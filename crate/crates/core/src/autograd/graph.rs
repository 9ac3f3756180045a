//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node appended after its inputs,
//! so reverse index order is a valid topological order for the backward
//! sweep. Parameters are copied into the graph as leaves and their gradients
//! are accumulated into a [`ParamStore`] by [`Graph::backward`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use super::kernels::{gelu, gelu_grad, gemm, order_invariant_sum, sigmoid};
use super::params::{ParamId, ParamStore};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Finite stand-in for `-inf` in additive attention masks.
pub const MASK_NEG: f64 = -1e9;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice(NodeId, usize, usize),
    Sum(NodeId),
    SumAxis(NodeId, usize),
    MaxAxis(NodeId, usize, Vec<usize>),
    ExpandRows(NodeId),
    Softmax(NodeId),
    Sigmoid(NodeId),
    Gelu(NodeId),
    LayerNorm(NodeId, Vec<f64>),
    Embedding(NodeId, Vec<usize>),
    Dropout(NodeId, Vec<f64>),
    Pool(NodeId, NodeId),
    BceWithLogits(NodeId, Vec<f64>),
    CrossEntropy(NodeId, Vec<Option<usize>>, usize),
    Dice(NodeId, Vec<f64>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, NodeId>,
    non_finite: Option<String>,
}

/// A differentiable computation under construction.
#[derive(Default)]
pub struct Graph {
    inner: RefCell<Inner>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({:?}, {:?})", self.id.0, self.shape())
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        if cfg!(debug_assertions) && inner.non_finite.is_none() && !value.is_finite() {
            inner.non_finite = Some(format!("{op:?}"));
        }
        let id = NodeId(inner.nodes.len());
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        inner.grads.push(None);
        id
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var { graph: self, id }
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        self.inner.borrow().nodes[id.0].value.clone()
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|i| inner.nodes[i.0].requires_grad)
    }

    fn unary(&self, value: Tensor, a: NodeId, op: Op) -> Var<'_> {
        let rg = self.needs(&[a]);
        self.var(self.push(value, op, rg))
    }

    /// Constant input that does not receive gradients.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.var(self.push(t, Op::Leaf, false))
    }

    /// Input leaf whose gradient is kept and readable with [`Graph::grad`].
    pub fn input(&self, t: Tensor) -> Var<'_> {
        self.var(self.push(t, Op::Leaf, true))
    }

    /// Leaf holding a copy of a parameter; repeated calls share one node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&n) = self.inner.borrow().params.get(&id) {
            return self.var(n);
        }
        let n = self.push(store.value(id).clone(), Op::Param(id), true);
        self.inner.borrow_mut().params.insert(id, n);
        self.var(n)
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Gradient accumulated at `v` by previous [`Graph::backward`] calls.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let inner = self.inner.borrow();
        let shape = inner.nodes[v.id.0].value.shape().to_vec();
        inner.grads[v.id.0]
            .as_ref()
            .map(|g| Tensor::new(shape, g.clone()).expect("grad shape"))
    }

    /// Name of the first operation that produced a non-finite value, if any.
    /// Only tracked when debug assertions are enabled.
    pub fn non_finite_op(&self) -> Option<String> {
        self.inner.borrow().non_finite.clone()
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Node gradients accumulate across calls; parameter-leaf gradients are
    /// added into `store`.
    pub fn backward(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        if let Some(op) = self.non_finite_op() {
            return Err(Error::NonFinite(op));
        }
        let mut inner = self.inner.borrow_mut();
        let n_nodes = inner.nodes.len();
        if inner.nodes[loss.id.0].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                inner.nodes[loss.id.0].value.shape()
            )));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        local[loss.id.0] = Some(vec![1.0]);
        for idx in (0..=loss.id.0).rev() {
            let Some(g) = local[idx].take() else { continue };
            let node = &inner.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            backprop(&inner.nodes, idx, &g, &mut local);
            local[idx] = Some(g);
        }
        for (idx, g) in local.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !inner.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Param(pid) = inner.nodes[idx].op {
                store.accumulate_grad(pid, &g);
            }
            match &mut inner.grads[idx] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(local: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, g: Vec<f64>) {
    if !nodes[id.0].requires_grad {
        return;
    }
    match &mut local[id.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

/// Gradient of a broadcast operand: sum `g` (full shape) over repeats of a
/// tensor with `small` elements.
fn reduce_broadcast(g: &[f64], small: usize) -> Vec<f64> {
    if g.len() == small {
        return g.to_vec();
    }
    let mut out = vec![0.0; small];
    for chunk in g.chunks_exact(small) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn backprop(nodes: &[Node], idx: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
    let node = &nodes[idx];
    let out = &node.value;
    let val = |id: NodeId| -> &Tensor { &nodes[id.0].value };
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (na, nb) = (val(*a).numel(), val(*b).numel());
            accumulate(local, nodes, *a, reduce_broadcast(g, na));
            let mut gb = reduce_broadcast(g, nb);
            if sign < 0.0 {
                gb.iter_mut().for_each(|v| *v = -*v);
            }
            accumulate(local, nodes, *b, gb);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            let (na, nb) = (va.len(), vb.len());
            let n = g.len();
            if nodes[a.0].requires_grad {
                let full: Vec<f64> = (0..n).map(|i| g[i] * vb[i % nb]).collect();
                accumulate(local, nodes, *a, reduce_broadcast(&full, na));
            }
            if nodes[b.0].requires_grad {
                let full: Vec<f64> = (0..n).map(|i| g[i] * va[i % na]).collect();
                accumulate(local, nodes, *b, reduce_broadcast(&full, nb));
            }
        }
        Op::Scale(a, s) => accumulate(local, nodes, *a, g.iter().map(|v| v * s).collect()),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(local, nodes, *a, g.to_vec()),
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().unwrap();
            let (_, n) = val(*b).dims2().unwrap();
            if nodes[a.0].requires_grad {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, val(*b).data(), true, &mut ga, false);
                accumulate(local, nodes, *a, ga);
            }
            if nodes[b.0].requires_grad {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, val(*a).data(), true, g, false, &mut gb, false);
                accumulate(local, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = val(*a).dims2().unwrap();
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] = g[j * r + i];
                }
            }
            accumulate(local, nodes, *a, ga);
        }
        Op::Concat(parts, axis) => {
            let (outer, total, inner) = axis_split(out.shape(), *axis);
            let mut offset = 0;
            for p in parts {
                let len = val(*p).shape()[*axis];
                if nodes[p.0].requires_grad {
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    accumulate(local, nodes, *p, gp);
                }
                offset += len;
            }
        }
        Op::Slice(a, axis, start) => {
            let (outer, total, inner) = axis_split(val(*a).shape(), *axis);
            let len = out.shape()[*axis];
            let mut ga = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            accumulate(local, nodes, *a, ga);
        }
        Op::Sum(a) => accumulate(local, nodes, *a, vec![g[0]; val(*a).numel()]),
        Op::SumAxis(a, axis) => {
            let (outer, len, inner) = axis_split(val(*a).shape(), *axis);
            let mut ga = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        ga[(o * len + l) * inner + i] = g[o * inner + i];
                    }
                }
            }
            accumulate(local, nodes, *a, ga);
        }
        Op::MaxAxis(a, axis, argmax) => {
            let (outer, len, inner) = axis_split(val(*a).shape(), *axis);
            let mut ga = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let l = argmax[o * inner + i];
                    ga[(o * len + l) * inner + i] += g[o * inner + i];
                }
            }
            accumulate(local, nodes, *a, ga);
        }
        Op::ExpandRows(a) => {
            let d = val(*a).numel();
            accumulate(local, nodes, *a, reduce_broadcast(g, d));
        }
        Op::Softmax(a) => {
            let d = last_dim(out.shape());
            let y = out.data();
            let mut ga = vec![0.0; y.len()];
            for r in 0..y.len() / d.max(1) {
                let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    ga[r * d + j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(local, nodes, *a, ga);
        }
        Op::Sigmoid(a) => {
            let ga = out
                .data()
                .iter()
                .zip(g)
                .map(|(y, g)| g * y * (1.0 - y))
                .collect();
            accumulate(local, nodes, *a, ga);
        }
        Op::Gelu(a) => {
            let ga = val(*a)
                .data()
                .iter()
                .zip(g)
                .map(|(x, g)| g * gelu_grad(*x))
                .collect();
            accumulate(local, nodes, *a, ga);
        }
        Op::LayerNorm(a, inv_std) => {
            // y = (x - mean) * inv_std; dx = inv_std * (g - mean(g) - y*mean(g*y))
            let d = last_dim(out.shape());
            let y = out.data();
            let mut ga = vec![0.0; y.len()];
            for (r, &s) in inv_std.iter().enumerate() {
                let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                let mg = gr.iter().sum::<f64>() / d as f64;
                let mgy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    ga[r * d + j] = s * (gr[j] - mg - yr[j] * mgy);
                }
            }
            accumulate(local, nodes, *a, ga);
        }
        Op::Embedding(table, ids) => {
            let (v, d) = val(*table).dims2().unwrap();
            let mut gt = vec![0.0; v * d];
            for (row, &id) in ids.iter().enumerate() {
                gt[id * d..(id + 1) * d]
                    .iter_mut()
                    .zip(&g[row * d..(row + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
            accumulate(local, nodes, *table, gt);
        }
        Op::Dropout(a, mask) => {
            accumulate(local, nodes, *a, g.iter().zip(mask).map(|(g, m)| g * m).collect())
        }
        Op::Pool(w, x) => {
            let (n, d) = val(*x).dims2().unwrap();
            let (wv, xv) = (val(*w).data(), val(*x).data());
            if nodes[w.0].requires_grad {
                let gw = (0..n)
                    .map(|i| (0..d).map(|j| g[j] * xv[i * d + j]).sum())
                    .collect();
                accumulate(local, nodes, *w, gw);
            }
            if nodes[x.0].requires_grad {
                let mut gx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        gx[i * d + j] = wv[i] * g[j];
                    }
                }
                accumulate(local, nodes, *x, gx);
            }
        }
        Op::BceWithLogits(a, targets) => {
            let n = targets.len() as f64;
            let ga = val(*a)
                .data()
                .iter()
                .zip(targets)
                .map(|(x, t)| g[0] * (sigmoid(*x) - t) / n)
                .collect();
            accumulate(local, nodes, *a, ga);
        }
        Op::CrossEntropy(a, targets, count) => {
            let logits = val(*a);
            let v = last_dim(logits.shape());
            let mut ga = vec![0.0; logits.numel()];
            for (r, t) in targets.iter().enumerate() {
                let Some(t) = t else { continue };
                let row = logits.row(r);
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                for j in 0..v {
                    let p = (row[j] - mx).exp() / z;
                    ga[r * v + j] = g[0] * (p - if j == *t { 1.0 } else { 0.0 }) / *count as f64;
                }
            }
            accumulate(local, nodes, *a, ga);
        }
        Op::Dice(a, targets) => {
            let p = val(*a).data();
            let (num, den) = dice_terms(p, targets);
            let ga = targets
                .iter()
                .map(|t| -g[0] * (2.0 * t * den - num) / (den * den))
                .collect();
            accumulate(local, nodes, *a, ga);
        }
    }
}

pub const DICE_EPS: f64 = 1.0;

fn dice_terms(p: &[f64], t: &[f64]) -> (f64, f64) {
    let inter: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let sp: f64 = p.iter().sum();
    let st: f64 = t.iter().sum();
    (2.0 * inter + DICE_EPS, sp + st + DICE_EPS)
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id.0].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn elementwise(
        self,
        other: Var<'g>,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(NodeId, NodeId) -> Op,
    ) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        let out_shape = if sa.len() >= sb.len() && sa.ends_with(sb) {
            sa
        } else if sb.ends_with(sa) {
            sb
        } else {
            return Err(shape_err(name, sa, sb));
        };
        let n = numel(out_shape);
        let (da, db) = (a.data(), b.data());
        let (na, nb) = (da.len().max(1), db.len().max(1));
        let data = (0..n).map(|i| f(da[i % na], db[i % nb])).collect();
        let value = Tensor::new(out_shape.to_vec(), data)?;
        let rg = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.var(self.graph.push(value, op(self.id, other.id), rg)))
    }

    /// Elementwise sum; the smaller operand may broadcast over leading axes.
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let v = self.value();
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * s).collect()).unwrap();
        self.graph.unary(t, self.id, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        let v = self.value();
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x + s).collect()).unwrap();
        self.graph.unary(t, self.id, Op::AddScalar(self.id))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let ((m, k), (k2, n)) = match (a.dims2(), b.dims2()) {
            (Ok(x), Ok(y)) => (x, y),
            _ => return Err(shape_err("matmul", a.shape(), b.shape())),
        };
        if k != k2 {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
        let rg = self.graph.needs(&[self.id, other.id]);
        let value = Tensor::new(vec![m, n], c)?;
        Ok(self.graph.var(self.graph.push(value, Op::MatMul(self.id, other.id), rg)))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let a = self.value();
        let (r, c) = a.dims2()?;
        let d = a.data();
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = d[i * c + j];
            }
        }
        Ok(self
            .graph
            .unary(Tensor::new(vec![c, r], t)?, self.id, Op::Transpose(self.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        if numel(shape) != a.numel() {
            return Err(shape_err("reshape", a.shape(), shape));
        }
        let t = Tensor::new(shape.to_vec(), a.data().to_vec())?;
        Ok(self.graph.unary(t, self.id, Op::Reshape(self.id)))
    }

    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let graph = first.graph;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        for v in &values[1..] {
            let s = v.shape();
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(shape_err("concat", &base, s));
            }
        }
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let rg = graph.needs(&ids);
        Ok(graph.var(graph.push(Tensor::new(shape, data)?, Op::Concat(ids, axis), rg)))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'g>> {
        let a = self.value();
        let s = a.shape();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{end} on axis {axis} of shape {s:?}"
            )));
        }
        let (outer, total, inner) = axis_split(s, axis);
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        Ok(self
            .graph
            .unary(Tensor::new(shape, data)?, self.id, Op::Slice(self.id, axis, start)))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.graph.unary(Tensor::scalar(s), self.id, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::Shape(format!("sum over axis {axis} of {:?}", a.shape())));
        }
        let (outer, len, inner) = axis_split(a.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += a.data()[(o * len + l) * inner + i];
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        Ok(self
            .graph
            .unary(Tensor::new(shape, data)?, self.id, Op::SumAxis(self.id, axis)))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        let len = self.shape().get(axis).copied().unwrap_or(1).max(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Maximum along `axis` (axis removed). Ties route gradient to the first.
    pub fn max_axis(self, axis: usize) -> Result<Var<'g>> {
        let a = self.value();
        if axis >= a.rank() || a.shape()[axis] == 0 {
            return Err(Error::Shape(format!("max over axis {axis} of {:?}", a.shape())));
        }
        let (outer, len, inner) = axis_split(a.shape(), axis);
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let v = a.data()[(o * len + l) * inner + i];
                    if v > data[o * inner + i] {
                        data[o * inner + i] = v;
                        arg[o * inner + i] = l;
                    }
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        Ok(self
            .graph
            .unary(Tensor::new(shape, data)?, self.id, Op::MaxAxis(self.id, axis, arg)))
    }

    /// Repeats a `[d]` or `[1, d]` tensor into `[n, d]`.
    pub fn expand_rows(self, n: usize) -> Result<Var<'g>> {
        let a = self.value();
        let d = match a.shape() {
            [d] | [1, d] => *d,
            s => return Err(Error::Shape(format!("expand_rows needs [d] or [1,d], got {s:?}"))),
        };
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(a.data());
        }
        Ok(self
            .graph
            .unary(Tensor::new(vec![n, d], data)?, self.id, Op::ExpandRows(self.id)))
    }

    /// Softmax over the last axis. Row normalisers use an order-invariant sum.
    pub fn softmax(self) -> Var<'g> {
        let a = self.value();
        let d = last_dim(a.shape()).max(1);
        let mut data = vec![0.0; a.numel()];
        let mut scratch = vec![0.0; d];
        for (r, row) in a.data().chunks(d).enumerate() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (s, x) in scratch.iter_mut().zip(row) {
                *s = (x - mx).exp();
            }
            data[r * d..(r + 1) * d].copy_from_slice(&scratch);
            let z = order_invariant_sum(&mut scratch);
            data[r * d..(r + 1) * d].iter_mut().for_each(|v| *v /= z);
        }
        let t = Tensor::new(a.shape().to_vec(), data).unwrap();
        self.graph.unary(t, self.id, Op::Softmax(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        let a = self.value();
        let t = Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| sigmoid(x)).collect())
            .unwrap();
        self.graph.unary(t, self.id, Op::Sigmoid(self.id))
    }

    pub fn gelu(self) -> Var<'g> {
        let a = self.value();
        let t = Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| gelu(x)).collect())
            .unwrap();
        self.graph.unary(t, self.id, Op::Gelu(self.id))
    }

    /// Normalises the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(self) -> Var<'g> {
        let a = self.value();
        let d = last_dim(a.shape()).max(1);
        let mut data = vec![0.0; a.numel()];
        let mut inv = Vec::with_capacity(a.numel() / d);
        for (r, row) in a.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, x) in data[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (x - mean) * s;
            }
            inv.push(s);
        }
        let t = Tensor::new(a.shape().to_vec(), data).unwrap();
        self.graph.unary(t, self.id, Op::LayerNorm(self.id, inv))
    }

    /// Rows of the `[V, d]` table selected by `ids`.
    pub fn embedding(self, ids: &[usize]) -> Result<Var<'g>> {
        let table = self.value();
        let (v, d) = table.dims2()?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Shape(format!("embedding id {id} out of range for table [{v}, {d}]")));
            }
            data.extend_from_slice(table.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self
            .graph
            .unary(t, self.id, Op::Embedding(self.id, ids.to_vec())))
    }

    /// Inverted dropout; the identity when `p == 0` or not training.
    pub fn dropout(self, p: f64, train: bool, rng: &mut impl Rng) -> Var<'g> {
        if !train || p <= 0.0 {
            return self;
        }
        let a = self.value();
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..a.numel())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(a.shape().to_vec(), data).unwrap();
        self.graph.unary(t, self.id, Op::Dropout(self.id, mask))
    }

    /// `Σ_i w_i · x_i` over the rows of `x: [N, d]` with `w: [N]` or `[1, N]`,
    /// giving `[1, d]`. Column sums are order-invariant, so permuting rows of
    /// `x` together with `w` leaves the result bit-identical.
    pub fn pool(weights: Var<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let (w, xv) = (weights.value(), x.value());
        let (n, d) = xv.dims2()?;
        if w.numel() != n || !matches!(w.shape(), [_] | [1, _]) {
            return Err(shape_err("pool", w.shape(), xv.shape()));
        }
        let mut out = vec![0.0; d];
        let mut col = vec![0.0; n];
        for (j, o) in out.iter_mut().enumerate() {
            for i in 0..n {
                col[i] = w.data()[i] * xv.data()[i * d + j];
            }
            *o = order_invariant_sum(&mut col);
        }
        let graph = x.graph;
        let rg = graph.needs(&[weights.id, x.id]);
        let t = Tensor::new(vec![1, d], out)?;
        Ok(graph.var(graph.push(t, Op::Pool(weights.id, x.id), rg)))
    }

    /// Mean binary cross-entropy on logits, `max(x,0) - t·x + ln(1 + e^-|x|)`.
    pub fn bce_with_logits(self, targets: &[f64]) -> Result<Var<'g>> {
        let a = self.value();
        if a.numel() != targets.len() {
            return Err(shape_err("bce_with_logits", a.shape(), &[targets.len()]));
        }
        let n = targets.len().max(1) as f64;
        let loss = a
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| (x.max(0.0) - t * x) + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.graph.unary(
            Tensor::scalar(loss),
            self.id,
            Op::BceWithLogits(self.id, targets.to_vec()),
        ))
    }

    /// Mean token cross-entropy of `[L, V]` logits; targets equal to
    /// `ignore_id` are skipped.
    pub fn cross_entropy(self, targets: &[usize], ignore_id: usize) -> Result<Var<'g>> {
        let a = self.value();
        let (l, v) = a.dims2()?;
        if l != targets.len() {
            return Err(shape_err("cross_entropy", a.shape(), &[targets.len()]));
        }
        let mut kept = Vec::with_capacity(l);
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore_id {
                kept.push(None);
                continue;
            }
            if t >= v {
                return Err(Error::Shape(format!("target id {t} out of range for {v} classes")));
            }
            let row = a.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            total += lse - row[t];
            count += 1;
            kept.push(Some(t));
        }
        if count == 0 {
            return Err(Error::Invalid("cross_entropy with no non-ignored targets".into()));
        }
        Ok(self.graph.unary(
            Tensor::scalar(total / count as f64),
            self.id,
            Op::CrossEntropy(self.id, kept, count),
        ))
    }

    /// `1 - (2·Σp·t + ε) / (Σp + Σt + ε)` with `ε = 1`.
    pub fn dice_loss(self, targets: &[f64]) -> Result<Var<'g>> {
        let a = self.value();
        if a.numel() != targets.len() {
            return Err(shape_err("dice_loss", a.shape(), &[targets.len()]));
        }
        let (num, den) = dice_terms(a.data(), targets);
        Ok(self.graph.unary(
            Tensor::scalar(1.0 - num / den),
            self.id,
            Op::Dice(self.id, targets.to_vec()),
        ))
    }
}

/// `softmax(Q·Kᵀ/√d_k + mask)·V`.
pub fn attention<'g>(
    q: Var<'g>,
    k: Var<'g>,
    v: Var<'g>,
    mask: Option<Var<'g>>,
) -> Result<Var<'g>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::Shape(format!(
            "attention: Q {qs:?}, K {ks:?}, V {vs:?} do not agree"
        )));
    }
    let scores = q.matmul(k.transpose()?)?.scale(1.0 / (qs[1] as f64).sqrt());
    let scores = match mask {
        Some(m) => {
            if m.shape() != [qs[0], ks[0]] {
                return Err(shape_err("attention mask", &m.shape(), &[qs[0], ks[0]]));
            }
            scores.add(m)?
        }
        None => scores,
    };
    scores.softmax().matmul(v)
}

/// Single-query attention whose reduction over keys is order-invariant:
/// permuting the rows of `k` and `v` together leaves the output bit-identical.
pub fn pooled_attention<'g>(q: Var<'g>, k: Var<'g>, v: Var<'g>) -> Result<Var<'g>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || qs[0] != 1 || ks.len() != 2 || qs[1] != ks[1] || vs.len() != 2 || ks[0] != vs[0] {
        return Err(Error::Shape(format!(
            "pooled_attention: Q {qs:?}, K {ks:?}, V {vs:?} do not agree"
        )));
    }
    let scores = q.matmul(k.transpose()?)?.scale(1.0 / (qs[1] as f64).sqrt());
    Var::pool(scores.softmax(), v)
}

/// Additive causal mask `[l, l]`: 0 on and below the diagonal, [`MASK_NEG`] above.
pub fn causal_mask(l: usize) -> Tensor {
    let mut data = vec![0.0; l * l];
    for i in 0..l {
        for j in i + 1..l {
            data[i * l + j] = MASK_NEG;
        }
    }
    Tensor::new(vec![l, l], data).unwrap()
}
