//! Parameterized layers on top of the autograd graph.

use ndarray::Array2;
use rand::Rng;

use crate::autograd::{glorot, Graph, ParamId, ParamStore, Var};
use crate::real::Real;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), glorot(rng, d_in, d_out), true),
            b: store.add(format!("{name}.b"), Array2::zeros((1, d_out)), true),
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, b)
    }
}

/// `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Mlp2 {
            l1: Linear::new(store, &format!("{name}.l1"), d_in, hidden, rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, d_out, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let h = self.l1.forward(g, x);
        let h = g.relu(h);
        self.l2.forward(g, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, d)), true),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, d)), true),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, ga, be, NORM_EPS)
    }
}

/// Which statistics batch normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// Statistics of the current batch (training).
    #[default]
    Batch,
    /// Stored running statistics (inference).
    Running,
}

/// Batch statistics observed in a training forward pass, to be folded into
/// the running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, d)), true),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, d)), true),
            mean: store.add(format!("{name}.running_mean"), Array2::zeros((1, d)), false),
            var: store.add(format!("{name}.running_var"), Array2::ones((1, d)), false),
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        mode: NormMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Var {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        match mode {
            NormMode::Batch => {
                let (y, mean, var) = g.batch_norm(x, ga, be, NORM_EPS);
                updates.push(BnUpdate {
                    mean_id: self.mean,
                    var_id: self.var,
                    mean,
                    var,
                });
                y
            }
            NormMode::Running => {
                let mean: Vec<T> = g.params().get(self.mean).iter().copied().collect();
                let var: Vec<T> = g.params().get(self.var).iter().copied().collect();
                g.batch_norm_fixed(x, ga, be, &mean, &var, NORM_EPS)
            }
        }
    }
}

/// Folds batch statistics into running buffers: `r = (1 - m) r + m b`.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>], momentum: f64) {
    let m = T::of(momentum);
    for u in updates {
        for (r, &b) in store.get_mut(u.mean_id).iter_mut().zip(&u.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in store.get_mut(u.var_id).iter_mut().zip(&u.var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}
