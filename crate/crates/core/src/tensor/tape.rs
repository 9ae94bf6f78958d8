use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{broadcast, conv, norm, ops, pool, resize, ShapeError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation whose forward value is computed by the caller.
///
/// `backward` receives the input values, the recorded output and the gradient
/// flowing into the output, and returns one gradient buffer per input (same
/// length as that input).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>>;
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Powf(Var, f64),
    SumAxes { x: Var },
    MaxAxes { x: Var, argmax: Vec<usize> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Conv2d(conv::ConvRecord),
    MaxPool2d { x: Var, argmax: Vec<usize> },
    AvgPool2d { x: Var, k: usize },
    UpsampleNearest { x: Var, factor: usize },
    ResizeBilinear { x: Var },
    GroupNorm(norm::GroupNormRecord),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Powf(x, _)
            | Op::Reshape(x)
            | Op::ResizeBilinear { x }
            | Op::SumAxes { x, .. }
            | Op::MaxAxes { x, .. }
            | Op::MaxPool2d { x, .. }
            | Op::AvgPool2d { x, .. }
            | Op::UpsampleNearest { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Conv2d(r) => r.inputs(),
            Op::GroupNorm(r) => r.inputs(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Linear record of executed operations, replayed in reverse by
/// [`Tape::backward`].
///
/// Node ids are assigned in execution order and every op only reads nodes
/// that already exist, so reverse id order visits each node after all of
/// its consumers. One tape serves one optimization step; call
/// [`Tape::clear`] (or drop it) before the next.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; nodes the loss did not depend on get zeros.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v);
        match self.grad(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()),
            None => Tensor::zeros(shape),
        }
    }

    /// Record an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// True iff every op reads only nodes recorded before it.
    pub fn verify_topological(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, n)| n.op.inputs().iter().all(|v| v.0 < i))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), ShapeError> {
        if self.value(loss).len() != 1 {
            return Err(ShapeError::Mismatch {
                op: "backward",
                detail: alloc::format!("loss must be scalar, got {:?}", self.shape(loss)),
            });
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g);
            self.grads[i] = Some(g);
            for (v, c) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(c.len(), self.nodes[v.0].value.len());
                match &mut self.grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => {
                let mut r = Vec::new();
                if wants(*a) {
                    r.push((*a, broadcast::reduce_to(g, out.shape(), val(*a).shape())));
                }
                if wants(*b) {
                    r.push((*b, broadcast::reduce_to(g, out.shape(), val(*b).shape())));
                }
                r
            }
            Op::Sub(a, b) => {
                let mut r = Vec::new();
                if wants(*a) {
                    r.push((*a, broadcast::reduce_to(g, out.shape(), val(*a).shape())));
                }
                if wants(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    r.push((*b, broadcast::reduce_to(&neg, out.shape(), val(*b).shape())));
                }
                r
            }
            Op::Mul(a, b) => ops::mul_backward(*a, *b, val(*a), val(*b), out.shape(), g, wants),
            Op::Scale(x, s) => vec![(*x, g.iter().map(|v| v * s).collect())],
            Op::AddScalar(x) => vec![(*x, g.to_vec())],
            Op::Relu(x) => {
                vec![(*x, val(*x).data().iter().zip(g).map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 }).collect())]
            }
            Op::Sigmoid(x) => vec![(*x, out.data().iter().zip(g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect())],
            Op::Log(x) => vec![(
                *x,
                val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > super::LOG_EPS { gv / xv } else { 0.0 })
                    .collect(),
            )],
            Op::Exp(x) => vec![(*x, out.data().iter().zip(g).map(|(&e, &gv)| gv * e).collect())],
            Op::Powf(x, p) => {
                vec![(*x, val(*x).data().iter().zip(g).map(|(&xv, &gv)| gv * p * libm::pow(xv, p - 1.0)).collect())]
            }
            Op::SumAxes { x, .. } => {
                vec![(*x, broadcast::expand_from(g, out.shape(), val(*x).shape()))]
            }
            Op::MaxAxes { x, argmax } => {
                let mut gx = vec![0.0; val(*x).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
                vec![(*x, gx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Concat { parts, axis } => ops::concat_backward(parts, *axis, |v| val(v), g),
            Op::Conv2d(rec) => rec.backward(|v| val(v), wants, g),
            Op::MaxPool2d { x, argmax } => {
                let mut gx = vec![0.0; val(*x).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
                vec![(*x, gx)]
            }
            Op::AvgPool2d { x, k } => vec![(*x, pool::avg_pool_backward(val(*x).shape(), *k, g))],
            Op::UpsampleNearest { x, factor } => {
                vec![(*x, resize::upsample_backward(val(*x).shape(), *factor, g))]
            }
            Op::ResizeBilinear { x } => vec![(*x, resize::bilinear_backward(val(*x).shape(), out.shape(), g))],
            Op::GroupNorm(rec) => rec.backward(|v| val(v), wants, g),
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let grads = op.backward(&ins, out, g);
                assert_eq!(grads.len(), inputs.len(), "{}: wrong gradient count", op.name());
                inputs.iter().copied().zip(grads).collect()
            }
        }
    }
}
