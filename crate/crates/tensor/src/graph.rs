use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

/// Maps the upstream gradient to one gradient per parent. `need[i]` is false
/// when parent `i` does not lead to any requested leaf and may be skipped.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Float> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    tracked: bool,
}

/// Append-only tape of tensor operations.
///
/// Every node is created after its parents, so the node vector is already a
/// topological order and backward is a single reverse sweep.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Float> Copy for Var<'_, T> {}

impl<T: Float> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    /// A graph that records backward closures for tracked leaves.
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A graph that never records backward closures.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf whose gradient can be requested from [`Graph::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(Rc::new(value), Vec::new(), None, self.grad_enabled)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(Rc::new(value), Vec::new(), None, false)
    }

    fn insert(
        &self,
        value: Rc<Tensor<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        tracked: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, tracked });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Records an operation. The backward closure is only built when some
    /// parent is tracked.
    pub fn record<F>(&self, value: Tensor<T>, parents: &[Var<'_, T>], make_backward: F) -> Var<'_, T>
    where
        F: FnOnce() -> BackwardFn<T>,
    {
        let tracked = self.grad_enabled && parents.iter().any(|p| p.is_tracked());
        let backward = tracked.then(make_backward);
        self.insert(Rc::new(value), parents.iter().map(|p| p.id).collect(), backward, tracked)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a single-element `loss`, returning gradients for
    /// the requested leaves only. Subgraphs that cannot reach a requested
    /// leaf are skipped entirely.
    pub fn backward(&self, loss: Var<'_, T>, wrt: &[Var<'_, T>]) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut reach = vec![false; loss.id + 1];
        for v in wrt {
            if v.id <= loss.id && nodes[v.id].tracked {
                reach[v.id] = true;
            }
        }
        for id in 0..=loss.id {
            if !reach[id] && nodes[id].tracked {
                reach[id] = nodes[id].parents.iter().any(|&p| reach[p]);
            }
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        let mut out = HashMap::new();
        if !reach[loss.id] {
            return Ok(Gradients { grads: out });
        }
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let need: Vec<bool> = node.parents.iter().map(|&p| reach[p]).collect();
                let parent_grads = backward(&grad, &need);
                for ((&p, g), needed) in node.parents.iter().zip(parent_grads).zip(need) {
                    let Some(g) = g else { continue };
                    if !needed {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            if node.parents.is_empty() {
                out.insert(id, grad);
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf, `None` when the loss does not depend on it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id)
    }

    /// Gradient of a leaf, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value().shape().to_vec()))
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.graph.nodes.borrow()[self.id].tracked
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        let value = self.value();
        self.graph.insert(value, Vec::new(), None, false)
    }
}
