//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Graph`] records operations eagerly; [`Graph::backward`] walks the tape
//! in reverse and returns gradients for the trainable parameters that took
//! part in the computation. Graphs are cheap and single-use: build one per
//! play, differentiate, drop.

mod kernels;
mod ops;
mod params;

pub use ops::{sigmoid, softmax_rows};
pub use params::{glorot, ParamId, ParamStore};

use std::sync::Arc;

use ndarray::Array2;

use crate::real::Real;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row index meaning "no source row" for [`Graph::gather_rows`]; yields zeros.
pub const NO_ROW: u32 = u32::MAX;

pub(crate) enum Op<T> {
    Leaf,
    Param(usize),
    Linear(Var, Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Arc<[u32]>),
    ScatterAdd(Var, Arc<[u32]>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv: Vec<T>,
        batch_stats: bool,
    },
    MaskedSoftmax(Var),
    SoftmaxNll {
        logits: Var,
        targets: Arc<[u32]>,
        probs: Array2<T>,
    },
    BceLogits {
        logits: Var,
        targets: Arc<Array2<T>>,
    },
    SumAll(Var),
}

pub(crate) struct Node<T> {
    pub(crate) value: Array2<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Gradients of a scalar with respect to the parameters of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub by_param: Vec<Option<Array2<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    /// Element-wise sum of several gradient sets, in order.
    pub fn sum(all: Vec<Grads<T>>) -> Option<Grads<T>> {
        let mut it = all.into_iter();
        let mut acc = it.next()?;
        for g in it {
            for (a, b) in acc.by_param.iter_mut().zip(g.by_param) {
                match (a.as_mut(), b) {
                    (Some(a), Some(b)) => *a += &b,
                    (None, Some(b)) => *a = Some(b),
                    _ => {}
                }
            }
        }
        Some(acc)
    }

    pub fn scale(&mut self, c: T) {
        for g in self.by_param.iter_mut().flatten() {
            g.mapv_inplace(|x| x * c);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, &x| m.max(x.as_f64().abs()))
    }
}

/// Operation tape bound to a parameter store.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> T {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    pub(crate) fn push(&mut self, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Var {
        let value = standard(value);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// The parameter's value as a node; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = self.push(value, Op::Param(id.0), self.params.is_trainable(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Reverse sweep from a 1x1 node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        let mut by_param: Vec<Option<Array2<T>>> = vec![None; self.params.len()];
        for k in (0..=loss.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            let g = standard(g);
            if !self.nodes[k].needs_grad {
                continue;
            }
            if let Op::Param(p) = self.nodes[k].op {
                by_param[p] = Some(g);
                continue;
            }
            self.backprop(k, g, &mut grads);
        }
        Grads { by_param }
    }
}

pub(crate) fn standard<T: Real>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

#[cfg(test)]
mod tests;
