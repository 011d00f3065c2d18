use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Maps an upstream gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Operation tape. Values live in [`Var`] handles; the tape only keeps the
/// closures needed to propagate gradients.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A recording graph: gradients can be taken with [`Graph::backward`].
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: true }
    }

    /// A non-recording graph. Intermediate values are freed as soon as their
    /// handles drop.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push(Node { parents: Vec::new(), backward: None, requires_grad: self.record });
        Var { graph: self, id, value: Rc::new(value) }
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push(Node { parents: Vec::new(), backward: None, requires_grad: false });
        Var { graph: self, id, value: Rc::new(value) }
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Record an operation result. `backward` receives the upstream gradient
    /// and returns one entry per parent, in order.
    pub(crate) fn op<'g>(
        &'g self,
        value: impl Into<Rc<Tensor<T>>>,
        parents: &[&Var<'g, T>],
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'g, T> {
        let requires_grad = self.record && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let node = if requires_grad {
            Node {
                parents: parents.iter().map(|p| p.id).collect(),
                backward: Some(Box::new(backward)),
                requires_grad: true,
            }
        } else {
            Node { parents: Vec::new(), backward: None, requires_grad: false }
        };
        let id = self.push(node);
        Var { graph: self, id, value: value.into() }
    }

    /// Reverse-mode sweep from a single-element output. The tape's closures
    /// are consumed, so a graph supports one backward pass.
    pub fn backward(&self, output: &Var<'_, T>) -> Gradients<T> {
        assert!(self.record, "backward() on an inference graph");
        assert_eq!(output.value.numel(), 1, "backward() requires a scalar output");
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::new(output.value.shape().to_vec(), vec![T::one()]));
        let mut leaves = HashMap::new();
        for id in (0..=output.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            match node.backward.take() {
                Some(backward) => {
                    let parent_grads = backward(&grad);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        match &mut grads[pid] {
                            Some(acc) => acc.add_assign(&pg),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
                None => {
                    if node.requires_grad {
                        leaves.insert(id, grad);
                    }
                }
            }
        }
        Gradients { by_id: leaves }
    }
}

/// Gradients of leaf variables after a backward sweep.
pub struct Gradients<T> {
    by_id: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `var`; `None` when the output does not depend on it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_id.get(&var.id)
    }

    /// Gradient of `var`, with zeros when the output does not depend on it.
    pub fn wrt(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

/// Handle to a value on a [`Graph`].
#[derive(Clone)]
pub struct Var<'g, T> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
    pub(crate) value: Rc<Tensor<T>>,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.value.shape()).finish()
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.value.dims4()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant((*self.value).clone())
    }
}
