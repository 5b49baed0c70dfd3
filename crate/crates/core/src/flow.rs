//! Flow-matching action head and its fixed-step Euler sampler.
//!
//! The head regresses `ε − A` along `A^τ = τ·A + (1−τ)·ε`. Integrating from
//! noise (`τ = 0`) to data (`τ = 1`) therefore subtracts the predicted field.

use serde::{Deserialize, Serialize};

use crate::backend::nn::{attention, init_attention, init_mlp, layer_norm, linear, mlp, sinusoidal_embedding};
use crate::backend::{Bound, Graph, ParamStore, Rng, Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldSign {
    /// Target `ε − A`, sampler `A ← A − Δ·V`.
    #[default]
    NoiseMinusData,
    /// Target `A − ε`, sampler `A ← A + Δ·V`.
    DataMinusNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub steps: usize,
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub sign: FieldSign,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { steps: 4, blocks: 4, width: 16, heads: 2, mlp_ratio: 2, sign: FieldSign::NoiseMinusData }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowHead {
    pub config: FlowConfig,
    pub horizon: usize,
    pub action_dims: usize,
    pub proprio_dims: usize,
    pub cond_dim: usize,
    pub params: ParamStore,
}

pub fn noise_action(a: &Tensor, tau: f64, eps: &Tensor) -> Result<Tensor> {
    if a.shape() != eps.shape() {
        return shape_err(format!("action {:?} vs noise {:?}", a.shape(), eps.shape()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("flow time {tau} outside [0, 1]")));
    }
    let data = a.data().iter().zip(eps.data()).map(|(x, e)| tau * x + (1.0 - tau) * e).collect();
    Ok(Tensor::from_rows(a.rows(), a.cols(), data))
}

/// Regression target for the configured sign convention.
pub fn flow_target(a: &Tensor, eps: &Tensor, sign: FieldSign) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| match sign {
            FieldSign::NoiseMinusData => e - x,
            FieldSign::DataMinusNoise => x - e,
        })
        .collect();
    Tensor::from_rows(a.rows(), a.cols(), data)
}

/// Mean squared error between the predicted field and the target.
pub fn fm_loss(g: &mut Graph, v: Var, a: &Tensor, eps: &Tensor, sign: FieldSign) -> Result<Var> {
    if g.value(v).shape() != a.shape() || a.shape() != eps.shape() {
        return shape_err(format!("field {:?}, action {:?}, noise {:?}", g.value(v).shape(), a.shape(), eps.shape()));
    }
    let t = g.constant(flow_target(a, eps, sign));
    Ok(g.mse(v, t))
}

/// Forward Euler from `A⁰ = ε` over `steps` equal increments of τ.
pub fn integrate<F>(eps: Tensor, steps: usize, sign: FieldSign, mut field: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("the sampler needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut a = eps;
    for n in 0..steps {
        let tau = n as f64 * dt;
        let v = field(&a, tau)?;
        if v.shape() != a.shape() {
            return shape_err(format!("field {:?} for state {:?}", v.shape(), a.shape()));
        }
        let s = match sign {
            FieldSign::NoiseMinusData => -dt,
            FieldSign::DataMinusNoise => dt,
        };
        for (x, d) in a.data_mut().iter_mut().zip(v.data()) {
            *x += s * d;
        }
    }
    Ok(a)
}

impl FlowHead {
    pub fn new(config: FlowConfig, horizon: usize, action_dims: usize, proprio_dims: usize, cond_dim: usize, rng: &mut Rng) -> Result<Self> {
        if config.steps == 0 {
            return Err(Error::Config("flow.steps must be at least 1".into()));
        }
        if config.width == 0 || config.heads == 0 || config.width % config.heads != 0 || config.width % 2 != 0 {
            return Err(Error::Config("flow.width must be even and divisible by flow.heads".into()));
        }
        let w = config.width;
        let mut p = ParamStore::new();
        p.linear("act_in", action_dims, w, 1.0, rng);
        p.linear("prop_in", proprio_dims, w, 1.0, rng);
        p.linear("tau_proj", w, w, 1.0, rng);
        p.normal("tok_pos", horizon + 1, w, 0.3, rng);
        p.linear("cond_proj", cond_dim, w, 1.0, rng);
        for b in 0..config.blocks {
            p.layer_norm(&format!("b{b}.ln1"), w);
            init_attention(&mut p, &format!("b{b}.self"), w, w, w, w, rng);
            p.layer_norm(&format!("b{b}.ln2"), w);
            init_attention(&mut p, &format!("b{b}.cross"), w, w, w, w, rng);
            p.layer_norm(&format!("b{b}.ln3"), w);
            init_mlp(&mut p, &format!("b{b}.mlp"), w, w * config.mlp_ratio, w, rng);
        }
        p.layer_norm("ln_f", w);
        p.linear("out", w, action_dims, 0.5, rng);
        Ok(Self { config, horizon, action_dims, proprio_dims, cond_dim, params: p })
    }

    /// Predicted field, `horizon × action_dims`.
    pub fn velocity_graph(&self, g: &mut Graph, p: &Bound, cond: Var, a_tau: Var, q: &[f64], tau: f64) -> Result<Var> {
        let [ch, cd] = g.value(cond).shape();
        if cd != self.cond_dim || ch == 0 {
            return shape_err(format!("conditioning {ch}×{cd}, expected width {}", self.cond_dim));
        }
        if g.value(a_tau).shape() != [self.horizon, self.action_dims] {
            return shape_err(format!("noised action {:?}, expected [{}, {}]", g.value(a_tau).shape(), self.horizon, self.action_dims));
        }
        if q.len() != self.proprio_dims {
            return shape_err(format!("proprio of length {}, expected {}", q.len(), self.proprio_dims));
        }
        let w = self.config.width;
        let qv = g.constant(Tensor::row_vector(q.to_vec()));
        let qt = linear(g, p, "prop_in", qv);
        let at = linear(g, p, "act_in", a_tau);
        let te = g.constant(Tensor::row_vector(sinusoidal_embedding(tau, w)));
        let te = linear(g, p, "tau_proj", te);
        let at = g.add_row(at, te);
        let x = g.concat_rows(&[qt, at]);
        let mut x = g.add(x, p.get("tok_pos"));
        let c = linear(g, p, "cond_proj", cond);
        let heads = self.config.heads;
        for b in 0..self.config.blocks {
            let n = layer_norm(g, p, &format!("b{b}.ln1"), x);
            let s = attention(g, p, &format!("b{b}.self"), n, n, heads, None);
            x = g.add(x, s);
            let n = layer_norm(g, p, &format!("b{b}.ln2"), x);
            let cr = attention(g, p, &format!("b{b}.cross"), n, c, heads, None);
            x = g.add(x, cr);
            let n = layer_norm(g, p, &format!("b{b}.ln3"), x);
            let m = mlp(g, p, &format!("b{b}.mlp"), n);
            x = g.add(x, m);
        }
        let x = layer_norm(g, p, "ln_f", x);
        let actions = g.slice_rows(x, 1, self.horizon + 1);
        Ok(linear(g, p, "out", actions))
    }

    pub fn velocity(&self, cond: &Tensor, a_tau: &Tensor, q: &[f64], tau: f64) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, |_| false);
        let c = g.constant(cond.clone());
        let a = g.constant(a_tau.clone());
        let v = self.velocity_graph(&mut g, &p, c, a, q, tau)?;
        Ok(g.value(v).clone())
    }

    pub fn sample_actions(&self, cond: &Tensor, q: &[f64], steps: usize, rng: &mut Rng) -> Result<Tensor> {
        let eps = Tensor::from_rows(self.horizon, self.action_dims, rng.normal_vec(self.horizon * self.action_dims, 1.0));
        integrate(eps, steps, self.config.sign, |a, tau| self.velocity(cond, a, q, tau))
    }
}
