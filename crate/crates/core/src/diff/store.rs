use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
    pub fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Adam hyperparameters plus optional global-norm clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Named parameters with Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    index: BTreeMap<String, usize>,
    pub(crate) m: Vec<Tensor<S>>,
    pub(crate) v: Vec<Tensor<S>>,
    pub(crate) step: u64,
}

impl<S: Scalar> Default for ParameterStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidTensor(format!("duplicate parameter `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidTensor(format!("parameter `{name}` is not finite")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.m.push(Tensor::zeros(value.rows(), value.cols()));
        self.v.push(Tensor::zeros(value.rows(), value.cols()));
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Glorot-uniform initialized `[rows, cols]` matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<ParamId> {
        let lim = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| S::lit(rng.random_range(-lim..lim)));
        self.add(name, t)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Clears the optimizer state, keeping values.
    pub fn reset_optimizer(&mut self) {
        for (m, v) in self.m.iter_mut().zip(&mut self.v) {
            *m = Tensor::zeros(m.rows(), m.cols());
            *v = Tensor::zeros(v.rows(), v.cols());
        }
        self.step = 0;
    }

    /// One Adam update. Returns the gradient norm before clipping.
    pub fn adam_step(&mut self, grads: &Gradients<S>, lr: f64, cfg: &AdamConfig) -> Result<f64> {
        if grads.grads.len() != self.values.len() {
            return Err(Error::InvalidTensor(format!(
                "{} gradients for {} parameters",
                grads.grads.len(),
                self.values.len()
            )));
        }
        for (g, p) in grads.grads.iter().zip(&self.values) {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        let norm = grads.global_norm();
        let clip = match cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);
        let (lr, eps, clip) = (S::lit(lr), S::lit(cfg.eps), S::lit(clip));
        for i in 0..self.values.len() {
            let g = grads.grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = self.values[i].data_mut();
            for k in 0..p.len() {
                let gk = g[k] * clip;
                m[k] = b1 * m[k] + (S::one() - b1) * gk;
                v[k] = b2 * v[k] + (S::one() - b2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

/// Per-parameter gradients from one or more backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    grads: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(store: &ParameterStore<S>) -> Self {
        Gradients {
            grads: store.values.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }

    pub(crate) fn accumulate(&mut self, p: usize, g: &Tensor<S>) {
        self.grads[p].add_assign(g);
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.grads[id.0]
    }

    pub fn add(&mut self, other: &Gradients<S>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: S) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= k;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.squared_norm().to_f64_lossy())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.is_finite())
    }
}
