//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Used by the autoencoding mixture model, the tagger and its CRF head.
//! The [`Graph`] records operations eagerly; [`Graph::backward`] sweeps the
//! tape once from a scalar root. Trainable weights live in a [`ParamStore`]
//! and are copied onto a graph with [`Graph::param`].

mod check;
mod graph;
mod matrix;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{grad_check, GradCheckReport};
pub use graph::{log_sum_exp, sigmoid, softmax_in_place, Axis, Gradients, Graph, Var};
pub use matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: matrix is not positive definite")]
    NotPositiveDefinite { op: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Param {
    name: String,
    value: Matrix,
    #[serde(skip)]
    grad: Option<Matrix>,
}

/// Named trainable matrices with gradient accumulators.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform initialised `rows × cols` weight.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let m = Matrix::from_fn(rows, cols, |_, _| dist.sample(rng));
        self.add(name, m)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Matrix> {
        self.params[id.0].grad.as_ref()
    }

    /// Adds the gradients of every parameter leaf on `graph` into the store.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) {
        for (var, id) in graph.leaf_params() {
            let Some(g) = grads.wrt(var) else { continue };
            let slot = &mut self.params[id.0].grad;
            match slot {
                Some(existing) => existing.add_assign(g),
                None => *slot = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .map(|g| g.as_slice().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

/// Plain stochastic gradient descent with optional global-norm clipping.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub clip_norm: Option<f64>,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd {
            clip_norm: Some(5.0),
        }
    }
}

impl Sgd {
    /// Applies `value -= lr * grad` to every parameter and clears gradients.
    /// Returns the pre-clipping gradient norm.
    pub fn step(&self, store: &mut ParamStore, lr: f64) -> f64 {
        let norm = store.grad_norm();
        let factor = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        for p in &mut store.params {
            if let Some(g) = p.grad.take() {
                for (v, d) in p.value.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *v -= lr * factor * d;
                }
            }
        }
        norm
    }
}

/// Adam with bias correction and optional global-norm clipping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update from the accumulated gradients, which are then cleared.
    /// Returns the pre-clipping gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> f64 {
        let norm = store.grad_norm();
        let factor = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in store.params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad.take() else { continue };
            let values = p.value.as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for (i, &gi) in g.as_slice().iter().enumerate() {
                let gi = gi * factor;
                ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * gi;
                vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * gi * gi;
                values[i] -= lr * (ms[i] / c1) / ((vs[i] / c2).sqrt() + self.eps);
            }
        }
        norm
    }
}
