use super::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Adjoint of one recorded operation.
pub(crate) trait Operation {
    fn backward(&self, values: &Values<'_>, out: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>);
}

pub(crate) struct Node {
    pub value: Tensor,
    pub requires_grad: bool,
    pub op: Option<Box<dyn Operation>>,
}

/// Read-only view of recorded values used by adjoints.
pub(crate) struct Values<'a>(&'a [Node]);

impl Values<'_> {
    pub fn get(&self, v: Var) -> &Tensor {
        &self.0[v.0].value
    }
}

/// Gradient accumulator handed to adjoints.
pub(crate) struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Tensor>],
}

impl GradSink<'_> {
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Mutable gradient buffer for `v`, or `None` when `v` needs no gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut())
    }
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, indexed by the leaf [`Var`]s of the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: None });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Appends a result; the adjoint is kept only when some input needs a
    /// gradient.
    pub(crate) fn push(&mut self, value: Tensor, inputs: &[Var], op: impl Operation + 'static) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Operation>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Each record is visited once, in
    /// reverse recording order; only leaf gradients are retained.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(shape, 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(op) = self.nodes[i].op.as_ref() else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let (before, _) = grads.split_at_mut(i);
            let mut sink = GradSink { nodes: &self.nodes[..i], grads: before };
            op.backward(&Values(&self.nodes[..i]), &self.nodes[i].value, &grad, &mut sink);
        }
        Ok(Gradients { grads })
    }
}
