use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// `wanted[i]` tells whether input `i` needs a gradient; slots for unwanted
/// inputs may be returned as `None` and are ignored.
pub trait Backward {
    fn backward(&self, grad_out: &[f64], inputs: &[&Tensor], output: &Tensor, wanted: &[bool])
        -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    backward: Option<Box<dyn Backward>>,
    requires_grad: bool,
    leaf: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only tape of operations. Node inputs always precede the node, so
/// reverse index order is a valid reverse topological order.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph that evaluates values only and records no backward
    /// information.
    pub fn no_grad() -> Self {
        let mut g = Self::new();
        g.recording = false;
        g
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values of every node in tape order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> + '_ {
        self.nodes.iter().map(|n| &n.value)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.recording,
            leaf: true,
            grad: None,
        })
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::NoGraph);
        }
        Ok(())
    }

    /// Value of a node.
    ///
    /// Panics if `v` belongs to another graph.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "variable belongs to a different graph");
        &self.nodes[v.index].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        v.graph == self.id && self.nodes[v.index].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        if v.graph != self.id {
            return None;
        }
        self.nodes[v.index].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Records the result of an operation. Backward information is kept only
    /// when recording is on and at least one input requires a gradient.
    pub fn record(&mut self, value: Tensor, inputs: &[Var], op: impl Backward + 'static) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        let (inputs, backward): (Vec<usize>, Option<Box<dyn Backward>>) = if requires_grad {
            (inputs.iter().map(|v| v.index).collect(), Some(Box::new(op)))
        } else {
            (Vec::new(), None)
        };
        Ok(self.push(Node {
            value,
            inputs,
            backward,
            requires_grad,
            leaf: false,
            grad: None,
        }))
    }

    /// Populates the gradient of every leaf reachable from `loss` with
    /// d(loss)/d(leaf). Leaf gradients accumulate across calls until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let root = &self.nodes[loss.index];
        if root.value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::NoGraph);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![1.0]);
        for i in (0..=loss.index).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.leaf {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    None => node.grad = Some(grad),
                }
                continue;
            }
            let Some(op) = node.backward.as_ref() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let wanted: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let input_grads = op.backward(&grad, &inputs, &node.value, &wanted);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            let targets = node.inputs.clone();
            for ((j, g), want) in targets.into_iter().zip(input_grads).zip(wanted) {
                let Some(g) = g else { continue };
                if !want {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[j].value.len());
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
