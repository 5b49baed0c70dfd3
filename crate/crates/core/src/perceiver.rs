//! Latent action / latent state perceivers.
//!
//! Both roles share one architecture: learnable queries cross-attend to the
//! feature tokens of a frame pair, self-attend, and a two-layer MLP projects
//! them into the backbone width. The final layer is twice as wide and split
//! into left- and right-hand heads. The parameter named [`QUERIES`] is the
//! query half; everything else, heads included, is the backbone half.

use serde::{Deserialize, Serialize};

use crate::backend::nn::{attention, init_attention, layer_norm, linear};
use crate::backend::{Bound, Graph, ParamStore, Rng, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::motion::HandSide;

pub const QUERIES: &str = "queries";
pub const PERCEIVER_LAYERS: usize = 2;

pub fn is_query(name: &str) -> bool {
    name == QUERIES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceiverConfig {
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub query_std: f64,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        Self { width: 16, heads: 2, mlp_hidden: 32, query_std: 1.0 }
    }
}

/// Shapes shared by every perceiver instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceiverArch {
    pub config: PerceiverConfig,
    pub feature_dim: usize,
    pub tokens_per_frame: usize,
    /// Number of latents, equal to the motion slots per chunk.
    pub latents: usize,
    pub out_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentRole {
    Action,
    State,
}

impl PerceiverArch {
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.width == 0 || c.heads == 0 || c.width % c.heads != 0 {
            return Err(Error::Config("perceiver.width must be a positive multiple of perceiver.heads".into()));
        }
        if self.latents == 0 || self.tokens_per_frame == 0 {
            return Err(Error::Config("perceiver needs at least one latent and one feature token".into()));
        }
        Ok(())
    }

    pub fn init(&self, rng: &mut Rng) -> Result<ParamStore> {
        self.validate()?;
        let w = self.config.width;
        let mut p = ParamStore::new();
        p.normal(QUERIES, self.latents, w, self.config.query_std, rng);
        p.linear("in_proj", self.feature_dim, w, 1.0, rng);
        p.normal("frame_emb", 2 * self.tokens_per_frame, w, 0.5, rng);
        for l in 0..PERCEIVER_LAYERS {
            p.layer_norm(&format!("l{l}.ln_q"), w);
            p.layer_norm(&format!("l{l}.ln_kv"), w);
            init_attention(&mut p, &format!("l{l}.cross"), w, w, w, w, rng);
            p.layer_norm(&format!("l{l}.ln_s"), w);
            init_attention(&mut p, &format!("l{l}.self"), w, w, w, w, rng);
        }
        p.layer_norm("out.ln", w);
        p.linear("out.fc1", w, self.config.mlp_hidden, 1.0, rng);
        p.linear("out.fc2", self.config.mlp_hidden, 2 * self.out_dim, 1.0, rng);
        Ok(p)
    }

    /// Latents for a frame pair, `latents × out_dim`.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, first: &[f64], second: &[f64], hand: HandSide) -> Result<Var> {
        let fd = self.feature_dim;
        let expect = fd * self.tokens_per_frame;
        if first.len() != second.len() {
            return shape_err(format!("frame features of lengths {} and {}", first.len(), second.len()));
        }
        if first.len() != expect {
            return shape_err(format!("frame features of length {}, expected {expect}", first.len()));
        }
        let mut data = Vec::with_capacity(2 * expect);
        data.extend_from_slice(first);
        data.extend_from_slice(second);
        let tokens = g.constant(Tensor::from_rows(2 * self.tokens_per_frame, fd, data));
        let kv = linear(g, p, "in_proj", tokens);
        let kv = g.add(kv, p.get("frame_emb"));
        let heads = self.config.heads;
        let mut q = p.get(QUERIES);
        for l in 0..PERCEIVER_LAYERS {
            let qn = layer_norm(g, p, &format!("l{l}.ln_q"), q);
            let kvn = layer_norm(g, p, &format!("l{l}.ln_kv"), kv);
            let c = attention(g, p, &format!("l{l}.cross"), qn, kvn, heads, None);
            q = g.add(q, c);
            let qn = layer_norm(g, p, &format!("l{l}.ln_s"), q);
            let s = attention(g, p, &format!("l{l}.self"), qn, qn, heads, None);
            q = g.add(q, s);
        }
        let o = layer_norm(g, p, "out.ln", q);
        let o = linear(g, p, "out.fc1", o);
        let o = g.gelu(o);
        let both = linear(g, p, "out.fc2", o);
        let d = self.out_dim;
        Ok(match hand {
            HandSide::Left => g.slice_cols(both, 0, d),
            HandSide::Right => g.slice_cols(both, d, 2 * d),
        })
    }

    /// Latent actions from chunk boundary frames.
    pub fn lap_forward(&self, g: &mut Graph, p: &Bound, start: &[f64], end: &[f64], hand: HandSide) -> Result<Var> {
        self.forward_graph(g, p, start, end, hand)
    }

    /// Latent state from a duplicated initial frame.
    pub fn lsp_forward(&self, g: &mut Graph, p: &Bound, first: &[f64], hand: HandSide) -> Result<Var> {
        self.forward_graph(g, p, first, first, hand)
    }

    /// Graph-free evaluation.
    pub fn latents(&self, params: &ParamStore, first: &[f64], second: &[f64], hand: HandSide) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, |_| false);
        let z = self.forward_graph(&mut g, &p, first, second, hand)?;
        Ok(g.value(z).clone())
    }
}

/// Mean absolute difference over latents and dimensions.
pub fn align_loss(g: &mut Graph, h: Var, z: Var) -> Result<Var> {
    if g.value(h).shape() != g.value(z).shape() {
        return shape_err(format!("h {:?} vs z {:?}", g.value(h).shape(), g.value(z).shape()));
    }
    let diff = g.sub(h, z);
    let a = g.abs(diff);
    Ok(g.mean(a))
}

/// Trainable half of each role under decoupled optimization.
pub fn lap_trainable(name: &str) -> bool {
    is_query(name)
}

pub fn lsp_trainable(name: &str) -> bool {
    !is_query(name)
}

/// `lap.b ← α·lap.b + (1−α)·lsp.b` and `lsp.q ← α·lsp.q + (1−α)·lap.q`.
pub fn decoupled_ema_update(lap: &mut ParamStore, lsp: &mut ParamStore, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("EMA coefficient {alpha} outside [0, 1)")));
    }
    if !lap.isomorphic(lsp) {
        return Err(Error::Shape("perceiver parameter trees differ".into()));
    }
    for (name, dst) in lap.iter_mut() {
        if is_query(name) {
            continue;
        }
        let src = lsp.get(name).expect("isomorphic");
        blend(dst, src, alpha);
    }
    let lap_ref: &ParamStore = lap;
    for (name, dst) in lsp.iter_mut() {
        if is_query(name) {
            blend(dst, lap_ref.get(name).expect("isomorphic"), alpha);
        }
    }
    Ok(())
}

fn blend(dst: &mut Tensor, src: &Tensor, alpha: f64) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d = alpha * *d + (1.0 - alpha) * s;
    }
}

/// Per-coordinate standard deviation across samples, averaged over
/// coordinates. Each sample is one flattened latent set.
pub fn latent_spread(samples: &[Vec<f64>]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut total = 0.0;
    for j in 0..dim {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n;
        total += var.sqrt();
    }
    total / dim as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::seeded_rng;

    fn arch() -> PerceiverArch {
        PerceiverArch { config: PerceiverConfig::default(), feature_dim: 4, tokens_per_frame: 2, latents: 3, out_dim: 6 }
    }

    #[test]
    fn lsp_is_duplicated_frame_lap() {
        let a = arch();
        let p = a.init(&mut seeded_rng(1)).unwrap();
        let v: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false);
        let z1 = a.lsp_forward(&mut g, &b, &v, HandSide::Right).unwrap();
        let z2 = a.lap_forward(&mut g, &b, &v, &v, HandSide::Right).unwrap();
        assert_eq!(g.value(z1), g.value(z2));
        assert_eq!(g.value(z1).shape(), [3, 6]);
    }

    #[test]
    fn heads_follow_hand_side() {
        let a = arch();
        let p = a.init(&mut seeded_rng(2)).unwrap();
        let v: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let l = a.latents(&p, &v, &v, HandSide::Left).unwrap();
        let r = a.latents(&p, &v, &v, HandSide::Right).unwrap();
        assert_ne!(l, r);
        assert!(a.latents(&p, &v, &v[..4], HandSide::Left).is_err());
    }

    #[test]
    fn ema_endpoints() {
        let a = arch();
        let mut lap = a.init(&mut seeded_rng(3)).unwrap();
        let mut lsp = a.init(&mut seeded_rng(4)).unwrap();
        let (lap0, lsp0) = (lap.clone(), lsp.clone());
        decoupled_ema_update(&mut lap, &mut lsp, 0.0).unwrap();
        for (name, t) in lap.iter() {
            if is_query(name) {
                assert_eq!(t, lap0.get(name).unwrap());
            } else {
                assert_eq!(t, lsp0.get(name).unwrap());
            }
        }
        for (name, t) in lsp.iter() {
            if is_query(name) {
                assert_eq!(t, lap0.get(name).unwrap());
            } else {
                assert_eq!(t, lsp0.get(name).unwrap());
            }
        }
        assert!(decoupled_ema_update(&mut lap, &mut lsp, 1.0).is_err());
        assert!(decoupled_ema_update(&mut lap, &mut lsp, -0.1).is_err());
    }

    #[test]
    fn align_loss_arithmetic() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_rows(1, 2, vec![1.0, 0.0]));
        let z = g.constant(Tensor::from_rows(1, 2, vec![0.0, 1.0]));
        let l = align_loss(&mut g, h, z).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let l0 = align_loss(&mut g, h, h).unwrap();
        assert_eq!(g.value(l0).item(), 0.0);
    }

    #[test]
    fn spread_of_identical_samples_is_zero() {
        assert_eq!(latent_spread(&[vec![1.0, 2.0], vec![1.0, 2.0]]), 0.0);
        assert!((latent_spread(&[vec![0.0], vec![2.0]]) - 1.0).abs() < 1e-15);
    }
}
