//! Named parameter trees and their binding into a [`Graph`].

use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use super::rng::Rng;
use super::tensor::Tensor;

/// Name-ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Same names and shapes.
    pub fn isomorphic(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// Flattened values in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn unflatten(&mut self, values: &[f64]) {
        let mut off = 0;
        for t in self.params.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        assert_eq!(off, values.len(), "unflatten length mismatch");
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) {
        let data = rng.normal_vec(rows * cols, std);
        self.insert(name, Tensor::from_rows(rows, cols, data));
    }

    /// `{name}.w` (`fan_in × fan_out`, std `gain/√fan_in`) and zero `{name}.b`.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) {
        self.normal(&format!("{name}.w"), fan_in, fan_out, gain / (fan_in as f64).sqrt(), rng);
        self.insert(format!("{name}.b"), Tensor::zeros(1, fan_out));
    }

    /// `{name}.g` ones and `{name}.b` zeros.
    pub fn layer_norm(&mut self, name: &str, dim: usize) {
        self.insert(format!("{name}.g"), Tensor::full(1, dim, 1.0));
        self.insert(format!("{name}.b"), Tensor::zeros(1, dim));
    }

    /// Enter every parameter into `g`; those for which `trainable(name)` is
    /// false become constants.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), g.leaf(t.clone(), trainable(n))))
            .collect();
        Bound { vars }
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Adjoints of the trainable members, keyed by parameter name.
    pub fn collect_grads(&self, g: &Graph, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, &v)| g.requires_grad(v))
            .map(|(n, &v)| {
                let t = grads.get(v).cloned().unwrap_or_else(|| {
                    let [r, c] = g.value(v).shape();
                    Tensor::zeros(r, c)
                });
                (n.clone(), t)
            })
            .collect()
    }
}
