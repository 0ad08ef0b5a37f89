//! The computation record: a Wengert list of operations whose creation
//! order is the topological order, swept in reverse by [`Tape::backward`].

use super::tensor::Tensor;
use super::AdError;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward rule of one recorded operation: given all forward values, the
/// node's output gradient, and a sink, push gradient contributions to the
/// node's parents.
pub(crate) type BackwardFn = Box<dyn Fn(&[Tensor], &Tensor, &mut GradSink)>;

pub(crate) struct NodeMeta {
    pub op: &'static str,
    pub requires_grad: bool,
    pub leaf: bool,
    pub backward: Option<BackwardFn>,
}

/// Accumulates parent gradients during the reverse sweep. Contributions to
/// nodes that do not require gradients are dropped.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
    requires: &'a [bool],
    op: &'static str,
    error: Option<AdError>,
}

impl GradSink<'_> {
    /// Whether a contribution for `parent` would be kept; lets backward
    /// rules skip computing gradients nobody needs.
    pub fn needs(&self, parent: Var) -> bool {
        self.requires[parent.0]
    }

    pub fn add(&mut self, parent: Var, contribution: Tensor) {
        if self.error.is_some() || !self.requires[parent.0] {
            return;
        }
        if !contribution.all_finite() {
            self.error = Some(AdError::NonFinite { op: self.op });
            return;
        }
        match &mut self.grads[parent.0] {
            Some(g) => g.add_in_place(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }
}

/// A single-threaded record of applied operations.
pub struct Tape {
    pub(crate) values: Vec<Tensor>,
    pub(crate) grads: Vec<Option<Tensor>>,
    pub(crate) meta: Vec<NodeMeta>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            grads: Vec::new(),
            meta: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A differentiable input; its gradient is retained after `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, "leaf", true, true, None)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, "constant", false, true, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient accumulated on `v` by the last `backward`; `None` for
    /// non-leaf nodes (released) and untouched leaves.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        op: &'static str,
        requires_grad: bool,
        leaf: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.meta.push(NodeMeta {
            op,
            requires_grad,
            leaf,
            backward,
        });
        Var(self.values.len() - 1)
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.meta[v.0].requires_grad
    }

    /// Record an op node; `requires_grad` is inherited from the parents and
    /// the backward rule is dropped when no parent needs gradients.
    pub(crate) fn push_op(
        &mut self,
        value: Tensor,
        op: &'static str,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Result<Var, AdError> {
        value.check_finite(op)?;
        let requires = parents.iter().any(|p| self.meta[p.0].requires_grad);
        let backward = if requires { Some(backward) } else { None };
        Ok(self.push(value, op, requires, false, backward))
    }

    /// Reverse sweep from a scalar loss. Leaf gradients are retained and
    /// summed over every path that reaches them; intermediate gradients are
    /// released as soon as their node has been processed.
    pub fn backward(&mut self, loss: Var) -> Result<(), AdError> {
        if self.consumed {
            return Err(AdError::BackwardConsumed);
        }
        let loss_shape = self.values[loss.0].shape().to_vec();
        if self.values[loss.0].len() != 1 {
            return Err(AdError::NonScalarLoss { shape: loss_shape });
        }
        self.consumed = true;
        let requires: Vec<bool> = self.meta.iter().map(|m| m.requires_grad).collect();
        self.grads[loss.0] = Some(Tensor::from_vec(&loss_shape, vec![1.0])?);
        for id in (0..=loss.0).rev() {
            let Some(grad_out) = self.grads[id].take() else {
                continue;
            };
            let node = &self.meta[id];
            if let Some(backward) = &node.backward {
                let mut sink = GradSink {
                    grads: &mut self.grads,
                    requires: &requires,
                    op: node.op,
                    error: None,
                };
                backward(&self.values, &grad_out, &mut sink);
                if let Some(err) = sink.error {
                    return Err(err);
                }
            }
            if node.leaf {
                self.grads[id] = Some(grad_out);
            }
        }
        Ok(())
    }
}
