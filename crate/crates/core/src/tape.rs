//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its output value, the ids of its
//! inputs and a [`Backward`] rule. Inputs always refer to earlier nodes, so the
//! node list is already in topological order and [`Tape::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradients w.r.t. each input, given the upstream gradient of the output.
    ///
    /// `needs[i]` is false when input `i` does not lead to any tracked leaf; the
    /// rule may return `None` for it. Returned tensors must match input shapes.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    tracked: bool,
}

/// Append-only computation record for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Whether gradients flow into `v` from any tracked leaf.
    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Name of the rule that produced `v`, or `None` for leaves.
    pub fn op_name(&self, v: Var) -> Option<&'static str> {
        self.nodes[v.0].rule.as_ref().map(|r| r.name())
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    /// Earliest node holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes.iter().position(|n| !n.value.is_finite()).map(Var)
    }

    /// Records the result of a custom operation.
    ///
    /// Operations outside this module (warps, cost volumes, test fixtures)
    /// compute their forward value themselves and register the backward rule
    /// here.
    pub fn record(&mut self, value: Tensor<T>, inputs: &[Var], rule: impl Backward<T> + 'static) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let rule: Option<Box<dyn Backward<T>>> = if tracked { Some(Box::new(rule)) } else { None };
        // Untracked results become constants; their rule would never run.
        let inputs = if tracked { inputs.to_vec() } else { Vec::new() };
        self.push(value, inputs, rule, tracked)
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<Var>,
        rule: Option<Box<dyn Backward<T>>>,
        tracked: bool,
    ) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        self.nodes.push(Node { value, inputs, rule, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `loss` w.r.t. every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(rule) = node.rule.as_ref() else { continue };
            let Some(grad) = grads[id].as_ref() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].tracked).collect();
            let contributions = rule.backward(&inputs, &node.value, grad, &needs);
            debug_assert_eq!(contributions.len(), node.inputs.len(), "{}", rule.name());
            for ((input, contribution), need) in node.inputs.iter().zip(contributions).zip(needs) {
                let Some(g) = contribution else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape(), "{}", rule.name());
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape when unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
