//! Reverse-mode differentiation tape.
//!
//! Operations on tape-linked tensors append a node holding the operation,
//! its input node ids and its output value. Inputs always precede their
//! consumers, so a single reverse sweep from the loss visits every node once
//! in topological order.
//!
//! Constants mixed into a recorded operation are stored as `Const` nodes.
//! They never receive gradient. A tensor produced by
//! [`Tensor::stop_gradient`](super::Tensor::stop_gradient) is such a constant
//! as far as the tape is concerned, which is what severs the gradient path.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use super::kernels::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Elementwise nonlinearities with a closed-form derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Silu,
    Gelu,
    Sin,
    Cos,
    Square,
    Exp,
    Tanh,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Square => x * x,
            Unary::Exp => x.exp(),
            Unary::Tanh => x.tanh(),
        }
    }

    /// Derivative at input `x`, given the already computed output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
            }
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Square => 2.0 * x,
            Unary::Exp => y,
            Unary::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Map(usize, Unary),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Reshape(usize),
    Clamp(usize, f64, f64),
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Arc<Vec<f64>>,
}

impl Node {
    fn requires_grad(&self) -> bool {
        !matches!(self.op, Op::Const)
    }
}

/// Records differentiable operations for one backward pass.
///
/// A tape is meant to live for a single training step: create it, bind the
/// parameters with [`Tape::var`], run the forward pass, call [`backward`],
/// then drop it.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Registers `value` as a differentiable leaf and returns the linked tensor.
    /// The storage is shared, not copied.
    pub fn var(&self, value: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, value.shape.clone(), value.shared_data());
        Tensor {
            shape: value.shape.clone(),
            data: value.shared_data(),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    pub(crate) fn push(&self, op: Op, shape: Vec<usize>, value: Arc<Vec<f64>>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape, value });
        nodes.len() - 1
    }

    /// Node id of `t` on this tape, inserting it as a constant if it is untracked.
    pub(crate) fn lift(&self, t: &Tensor) -> Result<usize> {
        match &t.node {
            Some(n) if n.tape.same_as(self) => Ok(n.id),
            Some(_) => Err(Error::TapeMismatch),
            None => Ok(self.push(Op::Const, t.shape.clone(), t.shared_data())),
        }
    }

    fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }
}

/// Gradients of one scalar loss with respect to every node on its tape.
pub struct Gradients {
    tape: Option<Tape>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `t`. Tensors with no path to the loss, and
    /// tensors that are not on the loss's tape, get zeros.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        self.get(t)
            .map(|g| Tensor::from_parts(t.shape.clone(), Arc::new(g.to_vec())))
            .unwrap_or_else(|| Tensor::zeros(&t.shape))
    }

    /// Borrowed gradient buffer, `None` when no gradient reached `t`.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let (tape, node) = (self.tape.as_ref()?, t.node.as_ref()?);
        if !tape.same_as(&node.tape) {
            return None;
        }
        self.grads.get(node.id)?.as_deref()
    }

    /// Moves the gradient buffer for `t` out, or zeros if none reached it.
    pub fn take(&mut self, t: &Tensor) -> Vec<f64> {
        let own = match (&self.tape, &t.node) {
            (Some(tape), Some(node)) if tape.same_as(&node.tape) => Some(node.id),
            _ => None,
        };
        own.and_then(|id| self.grads.get_mut(id).and_then(Option::take))
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }
}

thread_local! {
    static CORRUPTED: Cell<Option<Unary>> = const { Cell::new(None) };
}

/// Test fixture: while the returned guard is alive, the backward rule of
/// `op` on the current thread is scaled by `1.001`. Used as a negative
/// control for the gradient-check suite.
#[doc(hidden)]
pub fn corrupt_backward(op: Unary) -> CorruptionGuard {
    CORRUPTED.with(|c| c.set(Some(op)));
    CorruptionGuard(())
}

#[doc(hidden)]
pub struct CorruptionGuard(());

impl Drop for CorruptionGuard {
    fn drop(&mut self) {
        CORRUPTED.with(|c| c.set(None));
    }
}

fn corruption_factor(op: Unary) -> f64 {
    if CORRUPTED.with(|c| c.get()) == Some(op) {
        1.001
    } else {
        1.0
    }
}

/// Reverse sweep from a scalar `loss`.
///
/// A loss that is not linked to any tape depends on no parameter, so every
/// gradient is zero.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape.clone()));
    }
    let Some(root) = &loss.node else {
        return Ok(Gradients {
            tape: None,
            grads: Vec::new(),
        });
    };
    let nodes = root.tape.nodes();
    let mut grads: Vec<Option<Vec<f64>>> = (0..=root.id).map(|_| None).collect();
    grads[root.id] = Some(vec![1.0]);

    for id in (0..=root.id).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = &nodes[id];
        propagate(&nodes, node, &g, &mut grads);
        grads[id] = Some(g);
    }
    drop(nodes);
    Ok(Gradients {
        tape: Some(root.tape.clone()),
        grads,
    })
}

fn acc<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad() {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

/// Index into an operand that is either full-size or a broadcast scalar.
#[inline]
fn bidx(len: usize, i: usize) -> usize {
    if len == 1 {
        0
    } else {
        i
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match node.op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if let Some(ga) = acc(nodes, grads, a) {
                let n = ga.len();
                for (i, gi) in g.iter().enumerate() {
                    ga[bidx(n, i)] += gi;
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                let n = gb.len();
                for (i, gi) in g.iter().enumerate() {
                    gb[bidx(n, i)] += sign * gi;
                }
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            if let Some(ga) = acc(nodes, grads, a) {
                let n = ga.len();
                for (i, gi) in g.iter().enumerate() {
                    ga[bidx(n, i)] += gi * vb[bidx(vb.len(), i)];
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                let n = gb.len();
                for (i, gi) in g.iter().enumerate() {
                    gb[bidx(n, i)] += gi * va[bidx(va.len(), i)];
                }
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            if let Some(ga) = acc(nodes, grads, a) {
                let n = ga.len();
                for (i, gi) in g.iter().enumerate() {
                    ga[bidx(n, i)] += gi / vb[bidx(vb.len(), i)];
                }
            }
            if let Some(gb) = acc(nodes, grads, b) {
                let n = gb.len();
                for (i, gi) in g.iter().enumerate() {
                    let d = vb[bidx(vb.len(), i)];
                    gb[bidx(n, i)] -= gi * va[bidx(va.len(), i)] / (d * d);
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = acc(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += c * gi);
            }
        }
        Op::Offset(a) | Op::Reshape(a) => {
            if let Some(ga) = acc(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
            let n = nodes[b].shape[1];
            let (va, vb) = (nodes[a].value.clone(), nodes[b].value.clone());
            if let Some(ga) = acc(nodes, grads, a) {
                // dA = G · Bᵀ, with Bᵀ read through strides.
                gemm(m, n, k, g, (n, 1), &vb, (1, n), ga, 1.0);
            }
            if let Some(gb) = acc(nodes, grads, b) {
                // dB = Aᵀ · G
                gemm(k, m, n, &va, (1, k), g, (n, 1), gb, 1.0);
            }
        }
        Op::Map(a, u) => {
            let x = &nodes[a].value;
            let y = &node.value;
            let factor = corruption_factor(u);
            if let Some(ga) = acc(nodes, grads, a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * u.derivative(x[i], y[i]) * factor;
                }
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            if let Some(ga) = acc(nodes, grads, a) {
                let scale = if matches!(node.op, Op::Mean(_)) {
                    1.0 / ga.len() as f64
                } else {
                    1.0
                };
                let v = g[0] * scale;
                ga.iter_mut().for_each(|x| *x += v);
            }
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let shape = nodes[a].shape.clone();
            let (outer, len, inner) = split_axis(&shape, axis);
            let scale = if matches!(node.op, Op::MeanAxis(..)) {
                1.0 / len as f64
            } else {
                1.0
            };
            if let Some(ga) = acc(nodes, grads, a) {
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut ga[(o * len + l) * inner..(o * len + l + 1) * inner];
                        let src = &g[o * inner..(o + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * scale);
                    }
                }
            }
        }
        Op::AddRow(a, r) => {
            if let Some(ga) = acc(nodes, grads, a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
            if let Some(gr) = acc(nodes, grads, r) {
                let cols = gr.len();
                for row in g.chunks_exact(cols) {
                    gr.iter_mut().zip(row).for_each(|(x, gi)| *x += gi);
                }
            }
        }
        Op::MulRow(a, r) => {
            let (va, vr) = (nodes[a].value.clone(), nodes[r].value.clone());
            let cols = vr.len();
            if let Some(ga) = acc(nodes, grads, a) {
                for (grow, arow) in g.chunks_exact(cols).zip(ga.chunks_exact_mut(cols)) {
                    for j in 0..cols {
                        arow[j] += grow[j] * vr[j];
                    }
                }
            }
            if let Some(gr) = acc(nodes, grads, r) {
                for (grow, xrow) in g.chunks_exact(cols).zip(va.chunks_exact(cols)) {
                    for j in 0..cols {
                        gr[j] += grow[j] * xrow[j];
                    }
                }
            }
        }
        Op::Clamp(a, lo, hi) => {
            let x = nodes[a].value.clone();
            if let Some(ga) = acc(nodes, grads, a) {
                for i in 0..g.len() {
                    if x[i] >= lo && x[i] <= hi {
                        ga[i] += g[i];
                    }
                }
            }
        }
    }
}

/// `(outer, len, inner)` extents around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
