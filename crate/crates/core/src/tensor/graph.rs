//! Recorded forward graph and its reverse traversal.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{ops, Tensor};
use crate::dynconv::{self, KernelLayout, PerPixelKernels};
use crate::error::{Error, Result};
use crate::real::Real;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: usize, w: usize, b: usize, pad: usize },
    Relu(usize),
    PixelShuffle { x: usize, r: usize },
    Concat(Vec<usize>),
    Add(usize, usize),
    Scale(usize, f64),
    L2Loss { pred: usize, target: usize },
    DynConv { x: usize, k: usize, layout: KernelLayout },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Relu(x) | Op::PixelShuffle { x, .. } | Op::Scale(x, _) => vec![*x],
            Op::Concat(parts) => parts.clone(),
            Op::Add(a, b) => vec![*a, *b],
            Op::L2Loss { pred, target } => vec![*pred, *target],
            Op::DynConv { x, k, .. } => vec![*x, *k],
        }
    }
}

struct Node<E: Real> {
    value: Tensor<E>,
    op: Op,
    needs_grad: bool,
}

/// Operation record captured during a forward pass, in execution order.
pub struct Graph<E: Real = f32> {
    id: u64,
    nodes: Vec<Node<E>>,
}

impl<E: Real> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Real> Graph<E> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn resolve(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "node {} of graph {} is not recorded in graph {}",
                v.index, v.graph, self.id
            )));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<E>, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|&i| self.nodes[i].needs_grad);
        self.push_leafless(value, op, needs_grad)
    }

    fn push_leafless(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push_leafless(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is wanted (parameters, or inputs under test).
    pub fn variable(&mut self, value: Tensor<E>) -> Var {
        self.push_leafless(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<E>> {
        Ok(&self.nodes[self.resolve(v)?].value)
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, pad: usize) -> Result<Var> {
        let (x, w, b) = (self.resolve(x)?, self.resolve(weight)?, self.resolve(bias)?);
        let out = ops::conv2d(&self.nodes[x].value, &self.nodes[w].value, &self.nodes[b].value, pad)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, pad }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.resolve(x)?;
        let out = ops::relu(&self.nodes[x].value);
        Ok(self.push(out, Op::Relu(x)))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let x = self.resolve(x)?;
        let out = ops::pixel_shuffle(&self.nodes[x].value, r)?;
        Ok(self.push(out, Op::PixelShuffle { x, r }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.resolve(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<E>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let out = ops::concat_channels(&refs)?;
        Ok(self.push(out, Op::Concat(idx)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.resolve(a)?, self.resolve(b)?);
        let out = ops::add(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let x = self.resolve(x)?;
        let out = self.nodes[x].value.scale(E::from_f64(factor));
        Ok(self.push(out, Op::Scale(x, factor)))
    }

    /// Mean squared error as a `(1, 1, 1, 1)` node.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pred, target) = (self.resolve(pred)?, self.resolve(target)?);
        let loss = ops::l2_loss(&self.nodes[pred].value, &self.nodes[target].value)?;
        Ok(self.push(Tensor::scalar(loss), Op::L2Loss { pred, target }))
    }

    /// Dynamic convolution of `x` with predicted kernels `k` (either form,
    /// selected by `layout.rate`).
    pub fn dynamic_conv(&mut self, x: Var, k: Var, layout: KernelLayout) -> Result<Var> {
        let (x, k) = (self.resolve(x)?, self.resolve(k)?);
        // PerPixelKernels owns its tensor; the clone is the price of validation.
        let kernels = PerPixelKernels::new(self.nodes[k].value.clone(), layout)?;
        let input = &self.nodes[x].value;
        let out = if layout.rate == 1 {
            dynconv::dynamic_conv(input, &kernels)?
        } else {
            dynconv::dynamic_conv_upsample(input, &kernels)?
        };
        Ok(self.push(out, Op::DynConv { x, k, layout }))
    }

    /// Activation pattern of every recorded ReLU (input > 0), in execution
    /// order. Two evaluations with equal patterns lie on the same linear
    /// piece of each ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > E::zero()))
            .collect()
    }

    /// Reverse traversal from a scalar node; every recorded op is visited at
    /// most once, in reverse execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        let root = self.resolve(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar, node has shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape(), E::one()));
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let wants = |j: usize| self.nodes[j].needs_grad;
            let mut contribs: Vec<(usize, Tensor<E>)> = Vec::new();
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { x, w, b, pad } => {
                    let (gx, gw, gb) = ops::conv2d_backward(
                        &g,
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &self.nodes[*b].value,
                        *pad,
                        wants(*x),
                    )?;
                    if let Some(gx) = gx {
                        contribs.push((*x, gx));
                    }
                    contribs.push((*w, gw));
                    contribs.push((*b, gb));
                }
                Op::Relu(x) => contribs.push((*x, ops::relu_backward(&g, &self.nodes[*x].value)?)),
                Op::PixelShuffle { x, r } => contribs.push((*x, ops::pixel_unshuffle(&g, *r)?)),
                Op::Concat(parts) => {
                    let channels: Vec<usize> = parts.iter().map(|&p| self.nodes[p].value.c()).collect();
                    for (p, gp) in parts.iter().zip(ops::split_channels(&g, &channels)?) {
                        contribs.push((*p, gp));
                    }
                }
                Op::Add(a, b) => {
                    contribs.push((*a, g.clone()));
                    contribs.push((*b, g));
                }
                Op::Scale(x, f) => contribs.push((*x, g.scale(E::from_f64(*f)))),
                Op::L2Loss { pred, target } => {
                    let (p, t) = (&self.nodes[*pred].value, &self.nodes[*target].value);
                    let gp = ops::l2_loss_backward(g.data()[0], p, t)?;
                    if wants(*target) {
                        contribs.push((*target, gp.scale(-E::one())));
                    }
                    contribs.push((*pred, gp));
                }
                Op::DynConv { x, k, layout } => {
                    let kernels = PerPixelKernels::new(self.nodes[*k].value.clone(), *layout)?;
                    let (gx, gk) = dynconv::dynamic_conv_backward(&g, &self.nodes[*x].value, &kernels)?;
                    contribs.push((*x, gx));
                    contribs.push((*k, gk));
                }
            }
            for (j, gj) in contribs {
                if !wants(j) {
                    continue;
                }
                grads[j] = Some(match grads[j].take() {
                    None => gj,
                    Some(acc) => ops::add(&acc, &gj)?,
                });
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }
}

/// Gradients of one backward pass, addressable by the leaf [`Var`]s.
pub struct Gradients<E: Real = f32> {
    graph: u64,
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Real> Gradients<E> {
    /// Gradient of a leaf, `None` when no path reached it.
    pub fn get(&self, v: Var) -> Result<Option<&Tensor<E>>> {
        if v.graph != self.graph || v.index >= self.grads.len() {
            return Err(Error::Graph(format!("node {} was not part of this backward pass", v.index)));
        }
        Ok(self.grads[v.index].as_ref())
    }

    /// Takes ownership of a leaf gradient, zero-filled when unreached.
    pub fn take_or_zeros(&mut self, v: Var, shape: [usize; 4]) -> Result<Tensor<E>> {
        self.get(v)?;
        Ok(self.grads[v.index].take().unwrap_or_else(|| Tensor::zeros(shape)))
    }
}
