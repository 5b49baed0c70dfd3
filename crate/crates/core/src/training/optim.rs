//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::backend::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps: 1e-8, weight_decay, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advance the bias-correction counter; call once per optimizer step before
    /// the [`AdamW::update`] calls of that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update every parameter of `store` that has an entry in `grads`.
    /// Moments are keyed by `{scope}/{name}`.
    pub fn update(&mut self, scope: &str, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) {
        assert!(self.step > 0, "begin_step must precede update");
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name).unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            let key = format!("{scope}/{name}");
            let [r, c] = p.shape();
            let m = self.first.entry(key.clone()).or_insert_with(|| Tensor::zeros(r, c));
            let v = self.second.entry(key).or_insert_with(|| Tensor::zeros(r, c));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * self.weight_decay * *pv;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub(crate) fn moments(&self) -> (&BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (&self.first, &self.second)
    }

    pub(crate) fn restore(&mut self, step: u64, first: BTreeMap<String, Tensor>, second: BTreeMap<String, Tensor>) {
        self.step = step;
        self.first = first;
        self.second = second;
    }
}

pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads.into_iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescale so that the global norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_global_norm(groups: &mut [&mut BTreeMap<String, Tensor>], max_norm: f64) -> f64 {
    let norm = global_norm(groups.iter().flat_map(|g| g.values()));
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in groups.iter_mut() {
            for t in g.values_mut() {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_step_applies_only_weight_decay() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0));
        let mut opt = AdamW::new(0.9, 0.95, 0.05);
        let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(0.0))]);
        opt.begin_step();
        opt.update("m", &mut store, &grads, 0.1);
        let w = store.get("w").unwrap().item();
        assert!((w - (2.0 - 0.1 * 0.05 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let mut opt = AdamW::new(0.9, 0.95, 0.0);
        let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(3.0))]);
        opt.begin_step();
        opt.update("m", &mut store, &grads, 0.01);
        assert!((store.get("w").unwrap().item() - 0.99).abs() < 1e-9);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut a = BTreeMap::from([("x".to_string(), Tensor::row_vector(vec![3.0, 4.0]))]);
        let mut b = BTreeMap::from([("y".to_string(), Tensor::scalar(12.0))]);
        let pre = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert!((pre - 13.0).abs() < 1e-12);
        let post = global_norm(a.values().chain(b.values()));
        assert!(post <= 1.0 + 1e-6);
    }
}
