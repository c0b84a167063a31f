//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A tensor is a flat row-major buffer plus a shape. Operations record a
//! tape node (parent handles + a backward rule) on their output whenever any
//! input participates in gradient computation; `backward` on a scalar loss
//! walks the tape in reverse topological order and accumulates gradients
//! into every reachable `requires_grad` leaf.
//!
//! Tensors are immutable once created except for their grad buffer. A tape
//! belongs to one training step and one thread; concurrent backward on a
//! shared tape is forbidden by contract.

mod element;
mod ops;
pub mod smrt;

pub use element::Element;

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T: Element> {
    parents: Vec<Tensor<T>>,
    /// Maps the upstream gradient (output-shaped) to one dense gradient
    /// contribution per parent.
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    node: Option<Node<T>>,
}

/// Dense N-dimensional tensor, cheaply cloneable (shared buffer).
pub struct Tensor<T: Element>(Rc<RefCell<Inner<T>>>);

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor(Rc::new(RefCell::new(Inner {
            shape,
            data,
            requires_grad: false,
            grad: None,
            node: None,
        }))))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![T::zero(); numel]).unwrap()
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel]).unwrap()
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(vec![1], vec![value]).unwrap()
    }

    /// Marks this tensor as a trainable leaf.
    pub fn requires_grad(self) -> Self {
        self.0.borrow_mut().requires_grad = true;
        self
    }

    pub fn is_grad_leaf(&self) -> bool {
        self.0.borrow().requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn data(&self) -> Vec<T> {
        self.0.borrow().data.clone()
    }

    pub fn item(&self) -> T {
        let inner = self.0.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// In-place parameter update, used only by the optimizer between steps.
    pub fn apply_update(&self, f: impl Fn(usize, T) -> T) {
        let mut inner = self.0.borrow_mut();
        for (i, v) in inner.data.iter_mut().enumerate() {
            *v = f(i, *v);
        }
    }

    /// Detached copy: same values, no tape history, no grad requirement.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape(), self.data()).unwrap()
    }

    /// Casts element type; drops tape history.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .0
            .borrow()
            .data
            .iter()
            .map(|v| U::from_f64(v.as_f64()))
            .collect();
        Tensor::from_vec(self.shape(), data).unwrap()
    }

    fn ptr(&self) -> *const RefCell<Inner<T>> {
        Rc::as_ptr(&self.0)
    }

    fn tracked(&self) -> bool {
        let inner = self.0.borrow();
        inner.requires_grad || inner.node.is_some()
    }

    /// Builds an op output, recording a tape node iff any parent is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Tensor<T> {
        let out = Tensor::from_vec(shape, data).unwrap();
        if parents.iter().any(Tensor::tracked) {
            out.0.borrow_mut().node = Some(Node { parents, backward });
        }
        out
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// reachable `requires_grad` leaf; repeated calls without `zero_grad`
    /// keep accumulating.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.0.borrow();
            if inner.data.len() != 1 {
                return Err(Error::NonScalarLoss(inner.shape.clone()));
            }
        }

        // Iterative post-order DFS so deep graphs cannot overflow the stack.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<*const RefCell<Inner<T>>, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.contains_key(&t.ptr()) {
                continue;
            }
            visited.insert(t.ptr(), ());
            stack.push((t.clone(), true));
            if let Some(node) = t.0.borrow().node.as_ref() {
                for p in &node.parents {
                    if !visited.contains_key(&p.ptr()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<*const RefCell<Inner<T>>, Vec<T>> = HashMap::new();
        grads.insert(self.ptr(), vec![T::one()]);

        for t in order.iter().rev() {
            let upstream = match grads.remove(&t.ptr()) {
                Some(g) => g,
                None => continue, // not on any path to the loss
            };
            {
                let mut inner = t.0.borrow_mut();
                if inner.requires_grad {
                    let n = inner.data.len();
                    let grad = inner.grad.get_or_insert_with(|| vec![T::zero(); n]);
                    for (g, u) in grad.iter_mut().zip(&upstream) {
                        *g = *g + *u;
                    }
                }
            }
            let inner = t.0.borrow();
            if let Some(node) = inner.node.as_ref() {
                let parent_grads = (node.backward)(&upstream);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    if !p.tracked() {
                        continue;
                    }
                    let entry = grads
                        .entry(p.ptr())
                        .or_insert_with(|| vec![T::zero(); p.numel()]);
                    for (e, g) in entry.iter_mut().zip(&pg) {
                        *e = *e + *g;
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
