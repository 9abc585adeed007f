use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Vector-Jacobian product of one recorded op.
///
/// Receives the gradient of the op's output and a mask telling which parents
/// need a gradient; returns one optional gradient per parent.
pub type Backward<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<Backward<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Append-only record of a forward computation.
///
/// Nodes are created by operations on [`Var`]; [`Tape::backward`] walks them
/// in reverse creation order.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), param_nodes: RefCell::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Arc::new(value),
            parents: vec![],
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// A free input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Arc::new(value),
            parents: vec![],
            backward: None,
            requires_grad: true,
            param: None,
        })
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id
    /// return the same node, so shared weights accumulate one gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId, requires_grad: bool) -> Var<'_, T> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let var = self.push(Node {
            value: store.shared(id),
            parents: vec![],
            backward: None,
            requires_grad,
            param: Some(id),
        });
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    /// Records a new op. `backward` is dropped when no parent needs a gradient.
    pub fn op<F>(&self, parents: &[Var<'_, T>], value: Tensor<T>, backward: F) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(Node {
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            requires_grad,
            param: None,
        })
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));
        let mut out = Gradients { by_node: HashMap::new(), by_param: HashMap::new() };
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.backward {
                Some(f) => {
                    let mask: Vec<bool> =
                        node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
                    let pgrads = f(&g, &mask);
                    debug_assert_eq!(pgrads.len(), node.parents.len());
                    for ((&p, pg), need) in node.parents.iter().zip(pgrads).zip(mask) {
                        let Some(pg) = pg else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape");
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&pg),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
                None if node.requires_grad => {
                    if let Some(pid) = node.param {
                        out.by_param.insert(pid, g);
                    } else {
                        out.by_node.insert(id, g);
                    }
                }
                None => {}
            }
        }
        Ok(out)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.item()
    }
}

/// Gradients of leaves and parameters produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    by_node: HashMap<usize, Tensor<T>>,
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf created with [`Tape::leaf`]; `None` if the loss
    /// does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_node.get(&var.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn take_params(self) -> HashMap<ParamId, Tensor<T>> {
        self.by_param
    }

    pub fn all_finite(&self) -> bool {
        self.by_param.values().chain(self.by_node.values()).all(|t| t.all_finite())
    }
}
