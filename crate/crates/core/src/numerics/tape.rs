//! Reverse-mode differentiation on a linear tape.
//!
//! Every operation appends one node holding its forward value; node ids are therefore a
//! topological order and the backward sweep is a single reverse pass. Gradients of leaf
//! nodes accumulate across [`Tape::backward`] calls until [`Tape::zero_grad`].

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers an untracked leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Accumulates d(root)/d(leaf) into every trainable leaf reachable from `root`.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::InvalidArgument(
                "backward root belongs to another tape".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let numel = nodes[root.id].value.numel();
        if numel != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, has {numel} elements"),
            ));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        pending[root.id] = Some(vec![1.0]);
        let mut grads = self.grads.borrow_mut();
        if grads.len() < nodes.len() {
            grads.resize(nodes.len(), None);
        }
        for id in (0..=root.id).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut grads[id] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    slot @ None => {
                        *slot = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                    }
                }
                continue;
            }
            node.op.backward(&node.value, &g, &nodes, &mut pending);
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf; zeros when nothing has flowed into it.
    pub fn grad(&self, var: Var<'_>) -> Tensor {
        let grads = self.grads.borrow();
        match grads.get(var.id) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(self.nodes.borrow()[var.id].value.shape().to_vec()),
        }
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

/// Adds `f`'s contribution into the pending gradient of `id` when it is tracked.
pub(crate) fn accumulate(
    nodes: &[Node],
    pending: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = pending[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.numel(), 1);
        v.data()[0]
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn grad(&self) -> Tensor {
        self.tape.grad(*self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = x.squared_norm();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let loss = x.squared_norm();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new([2], vec![1.0, 3.0]).unwrap());
        let loss = x.sum_all();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().data(), &[2.0, 2.0]);
        tape.zero_grad();
        assert_eq!(x.grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros([2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn shared_subexpression_sums_both_paths() {
        // y = x*x + x  ⇒  dy/dx = 2x + 1
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap().add(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(x.grad().data(), &[7.0]);
    }
}
