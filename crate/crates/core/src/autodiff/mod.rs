//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! output value. [`Tape::backward`] replays the nodes in reverse recording
//! order and accumulates vector-Jacobian products into the inputs. Parameters
//! are borrowed from their owner (no copy per forward pass); inputs are owned
//! by the tape.
//!
//! ```
//! use audioseq::{Tape, Tensor};
//!
//! let x = Tensor::<f64>::from_rows(&[&[1.0, -2.0, 3.0]]).unwrap();
//! let mut tape = Tape::new();
//! let xv = tape.param(&x);
//! let sq = tape.mul(xv, xv).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(xv).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

mod ops;

pub(crate) use ops::{im2col_2d, log_sum_exp};
pub use ops::{Padding, Pointwise};

use crate::error::{Error, Result};
use crate::memory::MemoryTracker;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: ops::Op<T>,
    requires_grad: bool,
}

pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    spent: bool,
    mem: MemoryTracker,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self::with_tracker(MemoryTracker::new(None))
    }

    pub fn with_tracker(mem: MemoryTracker) -> Self {
        Self {
            nodes: Vec::new(),
            spent: false,
            mem,
        }
    }

    pub fn memory(&self) -> &MemoryTracker {
        &self.mem
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable tensor without copying it.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: ops::Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers an owned leaf. Its bytes count as activation memory.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.mem.reserve("leaf", t.bytes())?;
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: ops::Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check_recording(&self) -> Result<()> {
        if self.spent {
            Err(Error::TapeSpent)
        } else {
            Ok(())
        }
    }

    /// Reserves memory for an output of `numel` elements before it is built.
    fn reserve(&mut self, op: &'static str, numel: usize) -> Result<()> {
        self.check_recording()?;
        self.mem.reserve(op, numel * T::BYTES)
    }

    fn push(&mut self, out: Tensor<T>, op: ops::Op<T>) -> Result<Var> {
        if !out.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(out),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Back-propagates from a scalar `loss`. The tape cannot be replayed twice.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check_recording()?;
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss { shape });
        }
        self.spent = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        self.mem.reserve("backward", T::BYTES)?;
        grads[loss.0] = Some(vec![T::one()]);

        let mut leaves = Vec::new();
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                self.mem.release("backward", gy.len() * T::BYTES);
                continue;
            }
            if matches!(node.op, ops::Op::Leaf) {
                leaves.push((Var(id), gy));
                continue;
            }
            let contributions = ops::vjp(self, id, &gy)?;
            self.mem.release("backward", gy.len() * T::BYTES);
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        op: self.nodes[id].op.name(),
                    });
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => {
                        self.mem.reserve("backward", g.len() * T::BYTES)?;
                        *slot = Some(g);
                    }
                }
            }
        }

        let mut out = Gradients { grads: Vec::new() };
        for (v, g) in leaves.into_iter().rev() {
            let shape = self.shape(v).to_vec();
            out.grads.push((v, Tensor::from_parts(shape, g)));
        }
        Ok(out)
    }
}

/// Gradients of the loss with respect to every reachable leaf that requires
/// grad, keyed by the leaf's [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<(Var, Tensor<T>)>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads
            .binary_search_by_key(&v, |(k, _)| *k)
            .ok()
            .map(|i| &self.grads[i].1)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        let i = self.grads.binary_search_by_key(&v, |(k, _)| *k).ok()?;
        Some(self.grads.remove(i).1)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
