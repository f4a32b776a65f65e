use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Vector-Jacobian product of one recorded operation.
///
/// `inputs` are the operation's input values in recording order, `output` is
/// the value it produced and `grad` is dLoss/dOutput. Implementations return
/// one entry per input; `None` means the input receives no gradient from this
/// operation (integer-like inputs, masks).
pub trait Backward {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Rc<Tensor>,
    inputs: Vec<NodeId>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Eagerly recorded computation tape. Single-threaded by construction.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `op` applied to `inputs`, producing `output`.
    pub fn apply<'g>(&'g self, op: Box<dyn Backward>, inputs: &[Var<'g>], output: Tensor) -> Var<'g> {
        let ids: Vec<NodeId> = inputs.iter().map(|v| self.own(v)).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(output, ids, Some(op), requires_grad)
    }

    fn push(&self, value: Tensor, inputs: Vec<NodeId>, op: Option<Box<dyn Backward>>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            inputs,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn own(&self, v: &Var<'_>) -> NodeId {
        assert!(std::ptr::eq(self, v.graph), "variable belongs to a different graph");
        v.id
    }

    pub(crate) fn value_rc(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Populates gradients of every node that `loss` depends on.
    ///
    /// Nodes are visited once each, in reverse creation order. Calling this
    /// again on the same graph discards the previous gradients.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let loss_id = self.own(&loss);
        let nodes = self.nodes.borrow();
        if nodes[loss_id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss_id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss_id] = Some(vec![1.0]);
        for id in (0..=loss_id).rev() {
            let node = &nodes[id];
            let (Some(op), true) = (&node.op, node.requires_grad) else {
                continue;
            };
            // Interior gradients are consumed here; leaf gradients stay for `grad()`.
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), nodes[input].value.len(), "{}", op.name());
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        drop(nodes);
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    ///
    /// Leaves that the loss does not depend on get `None`; use
    /// [`Graph::grad_or_zeros`] for parameters.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let id = self.own(&v);
        let grads = self.grads.borrow();
        let g = grads.get(id)?.as_ref()?;
        Some(Tensor::new(self.nodes.borrow()[id].value.shape(), g.clone()).expect("grad shape"))
    }

    pub fn grad_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| n[self.id].value.as_ref())
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor> {
        self.graph.value_rc(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    /// Value of a single-element node.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        v.data()[0]
    }
}
