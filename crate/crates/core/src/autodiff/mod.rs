//! Minimal reverse-mode automatic differentiation over real tensors.
//!
//! Forward operations record a DAG of [`Tensor`] nodes; [`backward`] walks
//! the graph in reverse topological order and accumulates gradients into
//! every node that requires them. A graph belongs to a single training step
//! on a single thread (the hot kernels may still fan work out over rayon
//! internally, writing each output element exactly once, so results are
//! bit-reproducible regardless of scheduling).

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;

use crate::{Error, Result};
use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

/// Backward callback of one node: receives the gradient of the loss with
/// respect to the node's output and deposits contributions for its parents
/// into the [`GradStore`].
type BackwardFn = Box<dyn Fn(&[f64], &mut GradStore)>;

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Real-valued n-dimensional array participating in the autodiff graph.
///
/// Cloning a `Tensor` clones the handle, not the storage; the same node can
/// appear several times in a graph and its gradient contributions add up.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<RefCell<Node>>,
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording graph edges. Forward values are identical;
/// tensors created inside are constants.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|flag| {
        let prev = flag.replace(false);
        let result = f();
        flag.set(prev);
        result
    })
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|flag| flag.get())
}

impl Tensor {
    fn new_node(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        Tensor {
            node: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Leaf tensor that does not require gradients (inputs, targets).
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Tensor {
        Self::new_node(shape.to_vec(), data, false)
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Self::new_node(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::constant(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::constant(&[1], vec![value])
    }

    /// Derived node. Records parents and the backward callback unless
    /// gradient recording is disabled or no parent needs gradients.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64], &mut GradStore) + 'static,
    ) -> Tensor {
        let record = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let out = Self::new_node(shape, data, record);
        if record {
            let mut inner = out.node.borrow_mut();
            inner.parents = parents;
            inner.backward = Some(Box::new(backward));
        }
        out
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.node.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    /// Borrow the underlying values without copying.
    pub fn data_ref(&self) -> Ref<'_, [f64]> {
        Ref::map(self.node.borrow(), |n| n.data.as_slice())
    }

    pub fn data(&self) -> Vec<f64> {
        self.node.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> f64 {
        let inner = self.node.borrow();
        assert_eq!(inner.data.len(), 1, "value() on a non-scalar tensor");
        inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Overwrite the values of a leaf tensor (optimizer updates, gradient
    /// checking). Panics if the length changes.
    pub fn set_data(&self, data: &[f64]) {
        let mut inner = self.node.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    /// Add `delta` to one element in place.
    pub fn nudge(&self, index: usize, delta: f64) {
        self.node.borrow_mut().data[index] += delta;
    }

    /// Apply `f` to the mutable value slice of a leaf tensor.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.node.borrow_mut().data);
    }

    /// View with a different shape over the same (copied) values. The total
    /// element count must be preserved; gradients pass through unchanged.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.len(),
            "reshape changes element count"
        );
        let this = self.clone();
        Tensor::from_op(
            shape.to_vec(),
            self.data(),
            vec![self.clone()],
            move |out_grad, store| {
                store.accumulate(&this, out_grad);
            },
        )
    }

    /// Stable identity of the underlying node.
    pub(crate) fn id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    /// L2 norm of the values; used in abort diagnostics.
    pub fn l2_norm(&self) -> f64 {
        self.data_ref().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.node.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

/// Gradient accumulator used during one backward pass. Lives outside the
/// tensor cells so a backward callback can read parent values and deposit
/// parent gradients without aliasing borrows.
pub struct GradStore {
    slots: HashMap<usize, Vec<f64>>,
}

impl GradStore {
    fn new() -> Self {
        Self {
            slots: HashMap::new(),
        }
    }

    /// Elementwise-add a contribution for `t`.
    pub fn accumulate(&mut self, t: &Tensor, contribution: &[f64]) {
        let slot = self.slot(t);
        for (s, c) in slot.iter_mut().zip(contribution) {
            *s += c;
        }
    }

    /// Mutable zero-initialized gradient slot for `t`; callers add into it.
    pub fn slot(&mut self, t: &Tensor) -> &mut Vec<f64> {
        self.slots
            .entry(t.id())
            .or_insert_with(|| vec![0.0; t.len()])
    }

    fn take(&mut self, id: usize) -> Option<Vec<f64>> {
        self.slots.remove(&id)
    }
}

/// Reverse topological order (loss first) of the sub-graph that requires
/// gradients.
fn reverse_topo(loss: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // Iterative post-order DFS; graphs are shallow but batches can fan out.
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id());
    while let Some((tensor, next_parent)) = stack.pop() {
        let parent = {
            let inner = tensor.node.borrow();
            inner.parents.get(next_parent).cloned()
        };
        match parent {
            Some(p) => {
                stack.push((tensor, next_parent + 1));
                if p.requires_grad() && visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            }
            None => order.push(tensor),
        }
    }
    order.reverse();
    order
}

/// Run reverse-mode differentiation from a scalar loss. Populates `grad` on
/// every reachable tensor that requires gradients; repeated calls without
/// `zero_grad` keep accumulating, and a tensor consumed by several
/// operations receives the sum of all branch gradients.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.len() != 1 {
        return Err(Error::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Contract(
            "loss is not connected to any tensor requiring gradients".into(),
        ));
    }

    let order = reverse_topo(loss);
    let mut store = GradStore::new();
    store.accumulate(loss, &[1.0]);

    for tensor in order {
        let grad = match store.take(tensor.id()) {
            Some(g) => g,
            None => continue,
        };
        // Propagate to parents first (immutable borrow of this node only),
        // then record the gradient on the node itself.
        {
            let inner = tensor.node.borrow();
            if let Some(backward_fn) = &inner.backward {
                backward_fn(&grad, &mut store);
            }
        }
        let mut inner = tensor.node.borrow_mut();
        match &mut inner.grad {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(&grad) {
                    *e += g;
                }
            }
            None => inner.grad = Some(grad),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::param(&[3], vec![1.0, -2.0, 3.0]);
        let loss = ops::sum(&ops::mul(&x, &x).unwrap());
        backward(&loss).unwrap();
        let grad = x.grad().unwrap();
        assert_eq!(grad, vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn fan_out_gradients_accumulate() {
        let x = Tensor::param(&[4], vec![0.5; 4]);
        let loss = ops::sum(&ops::add(&x, &x).unwrap());
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = ops::mul(&x, &x).unwrap();
        assert!(matches!(backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = no_grad(|| ops::sum(&ops::mul(&x, &x).unwrap()));
        assert!(!y.requires_grad());
        assert!((y.value() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[1], vec![3.0]);
        let loss = ops::sum(&ops::mul(&x, &x).unwrap());
        backward(&loss).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn reshape_passes_gradients_through() {
        let x = Tensor::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let flat = x.reshape(&[6]);
        let loss = ops::sum(&ops::mul(&flat, &flat).unwrap());
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
    }
}
