//! Operation tape and the differentiable value handle [`Var`].
//!
//! Every op pushes one node in execution order, so node ids are already a
//! topological order. `backward` walks ids from the loss down to zero and
//! runs each node's pullback at most once. Gradients flowing into a node from
//! several consumers are summed before its pullback runs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps the upstream gradient to one optional gradient per input, in the
/// order the inputs were recorded.
pub(crate) type Pullback<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    inputs: Vec<usize>,
    pullback: Option<Pullback<T>>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Records operations for one forward pass.
pub struct Tape<T: Scalar = f32> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients will be collected for.
    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        let id = self.push_node(Vec::new(), None);
        Var {
            tape: Rc::clone(&self.inner),
            id,
            value: Rc::new(value),
            requires_grad,
        }
    }

    fn push_node(&self, inputs: Vec<usize>, pullback: Option<Pullback<T>>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { inputs, pullback });
        inner.nodes.len() - 1
    }

    /// Reverse-mode sweep from a scalar loss. Returns gradients for every
    /// leaf created with `requires_grad`. The tape cannot be swept twice.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if !Rc::ptr_eq(&self.inner, &loss.tape) {
            return Err(AutodiffError::State(
                "loss was recorded on a different tape".into(),
            ));
        }
        if loss.value.numel() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        if !loss.requires_grad {
            return Err(AutodiffError::State(
                "loss is detached from every differentiable leaf".into(),
            ));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(AutodiffError::State(
                "tape already consumed by an earlier backward pass".into(),
            ));
        }
        inner.consumed = true;

        let mut pending: Vec<Option<Tensor<T>>> = vec![None; loss.id + 1];
        pending[loss.id] = Some(Tensor::full(loss.value.shape().to_vec(), T::one()));
        let mut leaves = HashMap::new();
        for id in (0..=loss.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &mut inner.nodes[id];
            match node.pullback.take() {
                Some(pullback) => {
                    let inputs = std::mem::take(&mut node.inputs);
                    let input_grads = pullback(&grad);
                    debug_assert_eq!(input_grads.len(), inputs.len());
                    for (input, g) in inputs.into_iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        match &mut pending[input] {
                            Some(acc) => acc.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                None if node.inputs.is_empty() => {
                    leaves.insert(id, grad);
                }
                None => {}
            }
        }
        // Pullbacks of nodes that did not feed the loss hold captured values.
        for node in inner.nodes.iter_mut() {
            node.pullback = None;
        }
        Ok(Gradients { grads: leaves })
    }
}

/// A value on a tape. Cloning is cheap and refers to the same node.
#[derive(Clone)]
pub struct Var<T: Scalar = f32> {
    tape: Rc<RefCell<Inner<T>>>,
    id: usize,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn shared_value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    /// Records `value` as the result of an op over `inputs`. The pullback is
    /// only kept when some input needs a gradient.
    pub(crate) fn record<F>(inputs: &[&Var<T>], value: Tensor<T>, pullback: F) -> Result<Var<T>>
    where
        F: FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let first = inputs[0];
        for v in &inputs[1..] {
            if !Rc::ptr_eq(&first.tape, &v.tape) {
                return Err(AutodiffError::State(
                    "operands recorded on different tapes".into(),
                ));
            }
        }
        let requires_grad = inputs.iter().any(|v| v.requires_grad);
        let (ids, pullback): (Vec<usize>, Option<Pullback<T>>) = if requires_grad {
            let mask: Vec<bool> = inputs.iter().map(|v| v.requires_grad).collect();
            let pb: Pullback<T> = Box::new(move |g| {
                let mut grads = pullback(g);
                for (slot, needed) in grads.iter_mut().zip(&mask) {
                    if !needed {
                        *slot = None;
                    }
                }
                grads
            });
            (inputs.iter().map(|v| v.id).collect(), Some(pb))
        } else {
            (Vec::new(), None)
        };
        let id = {
            let mut inner = first.tape.borrow_mut();
            if inner.consumed {
                return Err(AutodiffError::State(
                    "cannot record on a consumed tape".into(),
                ));
            }
            inner.nodes.push(Node {
                inputs: ids,
                pullback,
            });
            inner.nodes.len() - 1
        };
        Ok(Var {
            tape: Rc::clone(&first.tape),
            id,
            value: Rc::new(value),
            requires_grad,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T: Scalar = f32> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id)
    }

    /// Takes ownership of a leaf's gradient, or a zero tensor when the leaf
    /// did not influence the loss.
    pub fn take_or_zero(&mut self, var: &Var<T>) -> Tensor<T> {
        self.grads
            .remove(&var.id)
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}
