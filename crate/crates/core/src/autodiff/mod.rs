//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive as it executes. Each node owns its
//! output value and a [`BackwardRule`]; [`Graph::backward`] walks the nodes
//! in reverse insertion order, which is a valid reverse topological order
//! because operands always precede the nodes that consume them.

mod finite_diff;
mod ops;

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

pub use finite_diff::{
    check_gradients, finite_difference, relative_error, GradCheckReport, GRAD_CHECK_EPS,
    GRAD_CHECK_TOL,
};
pub use ops::ElementwiseKind;
pub(crate) use ops::softmax;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded primitive.
pub trait BackwardRule: Send {
    /// Returns one gradient buffer per operand, in operand order. Entries for
    /// operands with `wanted[i] == false` may be `None`.
    fn backward(
        &self,
        grad_out: &[f64],
        operands: &[&Tensor],
        output: &Tensor,
        wanted: &[bool],
    ) -> Vec<Option<Vec<f64>>>;

    /// Feeds the discrete choices made in the forward pass (argmax indices,
    /// active masks) into `state`. Smooth primitives record nothing.
    fn record_switches(&self, _state: &mut SwitchState) {}
}

/// Accumulates the branch decisions of non-smooth primitives so two
/// evaluations can be checked for lying on the same smooth piece.
#[derive(Default)]
pub struct SwitchState {
    hasher: DefaultHasher,
}

impl SwitchState {
    pub fn indices(&mut self, idx: &[usize]) {
        idx.hash(&mut self.hasher);
    }

    pub fn mask(&mut self, mask: impl IntoIterator<Item = bool>) {
        for bit in mask {
            bit.hash(&mut self.hasher);
        }
    }

    fn finish(&self) -> u64 {
        self.hasher.finish()
    }
}

struct Node {
    value: Tensor,
    operands: Vec<Var>,
    rule: Option<Box<dyn BackwardRule>>,
    requires_grad: bool,
}

#[derive(Default)]
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

    /// Inserts a leaf; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(Node {
            value: tensor,
            operands: Vec::new(),
            rule: None,
            requires_grad,
        })
    }

    /// Inserts a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a primitive whose forward value has already been computed.
    pub fn record(
        &mut self,
        operands: &[Var],
        value: Tensor,
        rule: impl BackwardRule + 'static,
    ) -> Var {
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value: value.with_requires_grad(requires_grad),
            operands: operands.to_vec(),
            // constant subgraphs never need their rule again
            rule: requires_grad.then(|| Box::new(rule) as Box<dyn BackwardRule>),
            requires_grad,
        })
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Hash of every discrete decision taken by non-smooth primitives.
    pub fn switch_signature(&self) -> u64 {
        let mut state = SwitchState::default();
        for node in &self.nodes {
            if let Some(rule) = &node.rule {
                rule.record_switches(&mut state);
            }
        }
        state.finish()
    }

    /// Propagates `d loss / d node` back to every trainable leaf. The graph is
    /// consumed; rebuild it for the next forward pass.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.shape() != [1] {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must have shape [1], got {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for k in (0..=loss.0).rev() {
            let node = &self.nodes[k];
            let Some(rule) = &node.rule else { continue };
            let Some(grad_out) = grads[k].take() else { continue };
            let operands: Vec<&Tensor> = node
                .operands
                .iter()
                .map(|v| &self.nodes[v.0].value)
                .collect();
            let wanted: Vec<bool> = node
                .operands
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let partials = rule.backward(&grad_out, &operands, &node.value, &wanted);
            debug_assert_eq!(partials.len(), node.operands.len());
            for ((operand, partial), want) in node.operands.iter().zip(partials).zip(wanted) {
                let (Some(partial), true) = (partial, want) else { continue };
                debug_assert_eq!(partial.len(), self.nodes[operand.0].value.numel());
                match &mut grads[operand.0] {
                    Some(acc) => acc.iter_mut().zip(&partial).for_each(|(a, p)| *a += p),
                    slot @ None => *slot = Some(partial),
                }
            }
        }

        let mut by_leaf = BTreeMap::new();
        for (k, node) in self.nodes.iter().enumerate() {
            if node.rule.is_none() && node.operands.is_empty() && node.requires_grad {
                let shape = node.value.shape().to_vec();
                let data = match grads.get_mut(k).and_then(Option::take) {
                    Some(g) => g,
                    None => vec![0.0; node.value.numel()],
                };
                by_leaf.insert(Var(k), Tensor::new(shape, data)?);
            }
        }
        Ok(Gradients { by_leaf })
    }
}

/// Gradients of a scalar loss with respect to the trainable leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_leaf: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor> {
        self.by_leaf.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.by_leaf.iter().map(|(v, t)| (*v, t))
    }
}
