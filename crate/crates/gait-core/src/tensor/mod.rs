//! Dense row-major tensors with define-by-run reverse-mode autodiff.
//!
//! A `Tensor` is an immutable value plus, when it participates in a
//! differentiable computation, a link to the operation that produced it.
//! The recorded links form the graph; node ids are assigned in creation
//! order, so sorting by id gives a valid topological order and one reverse
//! sweep propagates gradients to every reachable leaf.
//!
//! Values are immutable once produced. The graph for one forward pass is
//! built and consumed on one logical thread; whole graphs may move across
//! threads (nodes are `Send + Sync`), which is how batch items are evaluated
//! in parallel.

mod gradcheck;
mod ops;
mod serial;

pub use gradcheck::grad_check;
pub use ops::{concat, ReduceKind};
pub use serial::{read_tensor, record_len, write_tensor};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::TensorError;
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Per-parent gradient contributions returned by a backward rule, aligned
/// with the node's parent list. `None` means "no gradient for this parent".
type GradContribs<T> = Vec<Option<Vec<T>>>;

/// Backward rule: maps the output gradient to per-parent contributions.
/// Rules capture whatever forward data they need (cheap `Arc` clones).
type BackwardRule<T> = Box<dyn Fn(&[T]) -> GradContribs<T> + Send + Sync>;

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    rule: Option<BackwardRule<T>>,
}

/// Dense n-dimensional array of scalars; cheap to clone (shared payload).
pub struct Tensor<T: Scalar> {
    node: Arc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.node.shape, self.node.requires_grad
        )
    }
}

pub(crate) fn check_shape_len<T>(shape: &[usize], data: &[T]) -> Result<(), TensorError> {
    let expect: usize = shape.iter().product();
    if expect != data.len() {
        return Err(TensorError::invalid(
            "tensor",
            format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            ),
        ));
    }
    if shape.contains(&0) {
        return Err(TensorError::invalid(
            "tensor",
            format!("zero extent in shape {:?}", shape),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        rule: Option<BackwardRule<T>>,
    ) -> Self {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced in tensor of shape {:?}",
            shape
        );
        Tensor {
            node: Arc::new(Node {
                id: fresh_id(),
                shape,
                data: Arc::new(data),
                requires_grad,
                grad: Mutex::new(None),
                parents,
                rule,
            }),
        }
    }

    /// Constant leaf: carries no gradient.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        check_shape_len(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Trainable leaf: participates in backward and accumulates a gradient.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        check_shape_len(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, true, Vec::new(), None))
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![], vec![v], false, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::zero(); n], false, Vec::new(), None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::one(); n], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![v; n], false, Vec::new(), None)
    }

    /// Leaf sharing an existing payload without copying (used to bind model
    /// parameters into a fresh graph).
    pub fn from_shared(
        shape: &[usize],
        data: Arc<Vec<T>>,
        requires_grad: bool,
    ) -> Result<Self, TensorError> {
        check_shape_len(shape, &data)?;
        Ok(Tensor {
            node: Arc::new(Node {
                id: fresh_id(),
                shape: shape.to_vec(),
                data,
                requires_grad,
                grad: Mutex::new(None),
                parents: Vec::new(),
                rule: None,
            }),
        })
    }

    /// Interior node produced by an operation. Graph links are only kept
    /// when some parent needs gradients; otherwise the result is a plain
    /// constant and upstream values can be freed eagerly.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        rule: impl Fn(&[T]) -> GradContribs<T> + Send + Sync + 'static,
    ) -> Self {
        let requires = parents.iter().any(|p| p.requires_grad());
        if requires {
            Self::build(shape, data, true, parents, Some(Box::new(rule)))
        } else {
            Self::build(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn len(&self) -> usize {
        self.node.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.node.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.as_ref().clone()
    }

    pub fn is_scalar(&self) -> bool {
        self.node.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<T, TensorError> {
        if !self.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.node.shape.clone(),
            });
        }
        Ok(self.node.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    /// Gradient accumulated by the most recent backward pass, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    /// Gradient, or zeros when this leaf was not reached by backward.
    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.len()])
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable leaf that requires gradients.
    pub fn backward(&self) -> Result<(), TensorError> {
        if !self.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.node.shape.clone(),
            });
        }
        backward_seeded(&[(self, vec![T::one()])])
    }
}

/// Reverse sweep from multiple roots, each seeded with an explicit output
/// gradient. This is the vector-Jacobian entry point the trainer uses to
/// push loss gradients from the batch-level loss graph into the per-item
/// forward graphs.
pub fn backward_seeded<T: Scalar>(roots: &[(&Tensor<T>, Vec<T>)]) -> Result<(), TensorError> {
    for (root, seed) in roots {
        if seed.len() != root.len() {
            return Err(TensorError::ShapeMismatch {
                op: "backward_seeded",
                lhs: root.shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
    }
    let graph = Graph::record(roots.iter().map(|(r, _)| (*r).clone()));
    graph.backprop(roots)
}

/// Ordered record of the differentiable operations reachable from a set of
/// roots. Creation ids increase monotonically, so ascending id order is a
/// topological order: every operation's inputs precede it.
pub struct Graph<T: Scalar> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Scalar> Graph<T> {
    /// Collect every grad-requiring node reachable from the roots, in
    /// ascending creation order.
    pub fn record(roots: impl IntoIterator<Item = Tensor<T>>) -> Self {
        let mut seen: HashMap<u64, Tensor<T>> = HashMap::new();
        let mut stack: Vec<Tensor<T>> = roots.into_iter().collect();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || seen.contains_key(&t.id()) {
                continue;
            }
            for p in &t.node.parents {
                if p.requires_grad() && !seen.contains_key(&p.id()) {
                    stack.push(p.clone());
                }
            }
            seen.insert(t.id(), t);
        }
        let mut nodes: Vec<Tensor<T>> = seen.into_values().collect();
        nodes.sort_by_key(|t| t.id());
        Graph { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Check the topological invariant: every node's parents precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.node.parents.iter().all(|p| p.id() < n.id()))
    }

    fn backprop(&self, roots: &[(&Tensor<T>, Vec<T>)]) -> Result<(), TensorError> {
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        for (root, seed) in roots {
            if !root.requires_grad() {
                continue;
            }
            match grads.entry(root.id()) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    for (a, b) in e.get_mut().iter_mut().zip(seed) {
                        *a += *b;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(seed.clone());
                }
            }
        }
        for node in self.nodes.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.node.rule {
                None => {
                    // Leaf: publish the accumulated gradient.
                    *node.node.grad.lock().expect("grad lock") = Some(g);
                }
                Some(rule) => {
                    let contribs = rule(&g);
                    debug_assert_eq!(contribs.len(), node.node.parents.len());
                    for (parent, contrib) in node.node.parents.iter().zip(contribs) {
                        let Some(c) = contrib else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(c.len(), parent.len());
                        match grads.entry(parent.id()) {
                            std::collections::hash_map::Entry::Occupied(mut e) => {
                                for (a, b) in e.get_mut().iter_mut().zip(&c) {
                                    *a += *b;
                                }
                            }
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
