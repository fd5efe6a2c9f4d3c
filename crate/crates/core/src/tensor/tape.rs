//! Define-by-run recording tape for reverse-mode differentiation.
//!
//! Every differentiable primitive evaluates its forward value eagerly and
//! records a node holding its parents and a backward closure. Node ids are
//! assigned in creation order, so parents always precede children and a
//! reverse sweep over ids is a valid topological order.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Backward rule: given the upstream gradient and a mask of which parents
/// need a gradient, return one entry per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

pub struct Tape<T> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<IndexMap<String, usize>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(IndexMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a named trainable leaf. Names are unique per tape.
    pub fn param(&self, name: impl Into<String>, value: Tensor<T>) -> Result<Var<'_, T>> {
        let name = name.into();
        if self.params.borrow().contains_key(&name) {
            return Err(Error::invalid(format!("parameter `{name}` registered twice")));
        }
        let var = self.push_leaf(value, true);
        self.params.borrow_mut().insert(name, var.id);
        Ok(var)
    }

    /// An unnamed leaf. With `requires_grad` its gradient is available
    /// through [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push_leaf(value, requires_grad)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push_node(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records the application of a primitive.
    ///
    /// The forward value is checked for NaN/Inf here so that a blow-up is
    /// attributed to the primitive that produced it.
    pub(crate) fn record<F>(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: F,
    ) -> Result<Var<'_, T>>
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        for p in parents {
            if p.tape.id != self.id {
                return Err(Error::ForeignVar);
            }
        }
        value.check_finite(op)?;
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        Ok(self.push_node(Node {
            op,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        }))
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from `loss`. Gradients reaching a node along several
    /// paths are summed. The tape is left untouched, so several losses
    /// recorded on one tape can be differentiated independently.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if loss.tape.id != self.id {
            return Err(Error::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = rule(&upstream, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for ((&pid, g), &need) in node.parents.iter().zip(parent_grads).zip(&mask) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        op: format!("{} (backward)", node.op),
                    });
                }
                debug_assert_eq!(g.shape(), nodes[pid].value.shape(), "{}", node.op);
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
            // keep the gradient of requires_grad leaves for lookup
            grads[id] = Some(upstream);
        }

        let params = self
            .params
            .borrow()
            .iter()
            .map(|(name, &id)| (name.clone(), id, nodes[id].value.shape().to_vec()))
            .collect();
        Ok(Gradients {
            tape_id: self.id,
            grads,
            params,
        })
    }
}

/// A handle to a recorded value.
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// The same value as a constant: nothing downstream of the returned
    /// variable propagates gradient into `self`.
    pub fn detach(&self) -> Var<'t, T> {
        let value = self.value();
        self.tape.push_node(Node {
            op: "detach",
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    pub fn backward(&self) -> Result<Gradients<T>> {
        self.tape.backward(*self)
    }
}

pub fn backward<T: Scalar>(loss: Var<'_, T>) -> Result<Gradients<T>> {
    loss.tape.backward(loss)
}

/// Result of one reverse sweep.
pub struct Gradients<T> {
    tape_id: u64,
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, usize, Vec<usize>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an arbitrary recorded variable, if any
    /// gradient reached it.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        if var.tape.id != self.tape_id {
            return None;
        }
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a named parameter; zero when the loss does not depend on
    /// it, `None` when no such parameter was registered.
    pub fn param(&self, name: &str) -> Option<Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, id, shape)| match self.grads.get(*id).and_then(|g| g.as_ref()) {
                Some(g) => g.clone(),
                None => Tensor::zeros(shape.clone()),
            })
    }

    /// Parameters the loss actually depends on.
    pub fn reachable(&self) -> IndexMap<String, Tensor<T>> {
        self.params
            .iter()
            .filter_map(|(name, id, _)| {
                self.grads
                    .get(*id)
                    .and_then(|g| g.as_ref())
                    .map(|g| (name.clone(), g.clone()))
            })
            .collect()
    }

    /// Every registered parameter, with zeros for unreachable ones.
    pub fn params(&self) -> IndexMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, _, _)| (name.clone(), self.param(name).expect("registered")))
            .collect()
    }
}
