//! Pre-norm transformer over token streams.

use serde::{Deserialize, Serialize};

use super::mask::{build_attention_mask, MaskPlan};
use crate::backend::nn::{attention, init_attention, init_mlp, layer_norm, linear, mlp};
use crate::backend::{Bound, Graph, ParamStore, Rng, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::motion::{HandSide, Modality, TokenStream, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub layers: usize,
    /// Block whose output residual is the predictive embedding; `0` selects
    /// `round(0.68 · layers)`.
    pub align_layer: usize,
    pub d_model: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub max_positions: usize,
    pub embed_std: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { layers: 4, align_layer: 0, d_model: 24, heads: 2, mlp_ratio: 4, max_positions: 64, embed_std: 0.3 }
    }
}

impl BackboneConfig {
    pub fn resolved_align_layer(&self) -> usize {
        if self.align_layer == 0 {
            ((0.68 * self.layers as f64).round() as usize).clamp(1, self.layers.max(1))
        } else {
            self.align_layer
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.resolved_align_layer();
        if self.layers == 0 || l == 0 || l > self.layers {
            return Err(Error::Config(format!("alignment layer {l} outside 1..={}", self.layers)));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config("backbone.d_model must be divisible by backbone.heads".into()));
        }
        if self.max_positions == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("backbone.max_positions and mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub vocab: Vocab,
    pub feature_dim: usize,
    pub params: ParamStore,
}

/// Inputs beyond the token ids: one feature vector per `VIS` slot and
/// optionally the state latents occupying the `LSP` slots.
pub struct StreamInputs<'a> {
    pub stream: &'a TokenStream,
    pub plan: &'a MaskPlan,
    pub visual: &'a [Vec<f64>],
    pub state_latents: Option<Var>,
}

pub struct ForwardOut {
    /// `len × vocab` scores at every position.
    pub logits: Var,
    /// `motion slots × d` hidden states after the alignment block, in stream order.
    pub h: Var,
    pub motion_positions: Vec<usize>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, vocab: Vocab, feature_dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let v = vocab.size() as usize;
        let mut p = ParamStore::new();
        p.normal("embed", v, d, config.embed_std, rng);
        p.normal("pos", config.max_positions, d, config.embed_std * 0.5, rng);
        p.normal("hand", 2, d, config.embed_std * 0.5, rng);
        p.linear("vis_proj", feature_dim, d, 1.0, rng);
        for l in 0..config.layers {
            p.layer_norm(&format!("l{l}.ln1"), d);
            init_attention(&mut p, &format!("l{l}.attn"), d, d, d, d, rng);
            p.layer_norm(&format!("l{l}.ln2"), d);
            init_mlp(&mut p, &format!("l{l}.mlp"), d, d * config.mlp_ratio, d, rng);
        }
        p.layer_norm("ln_f", d);
        p.linear("head", d, v, 1.0, rng);
        Ok(Self { config, vocab, feature_dim, params: p })
    }

    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, inp: &StreamInputs) -> Result<ForwardOut> {
        let s = inp.stream;
        let n = s.len();
        let d = self.config.d_model;
        if n > self.config.max_positions {
            return Err(Error::Overlength { len: n, max: self.config.max_positions });
        }
        if inp.plan.masked.len() != n {
            return shape_err(format!("mask plan covers {} of {n} positions", inp.plan.masked.len()));
        }
        let mask = build_attention_mask(s)?;
        let ids: Vec<usize> = s
            .ids
            .iter()
            .zip(&inp.plan.masked)
            .map(|(&id, &m)| if m { Vocab::MASK as usize } else { id as usize })
            .collect();
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab.size() as usize) {
            return Err(Error::TokenOutOfRange { id: bad as u32, vocab: self.vocab.size() });
        }
        let mut x = g.gather_rows(p.get("embed"), &ids);
        let pos = g.slice_rows(p.get("pos"), 0, n);
        x = g.add(x, pos);

        let vis_pos: Vec<usize> = (0..n).filter(|&i| s.ids[i] == Vocab::VIS && s.tags[i].modality == Modality::Visual).collect();
        if vis_pos.len() != inp.visual.len() {
            return shape_err(format!("{} visual slots but {} feature tokens", vis_pos.len(), inp.visual.len()));
        }
        if !vis_pos.is_empty() {
            let feats = Tensor::stack_rows(inp.visual)?;
            if feats.cols() != self.feature_dim {
                return shape_err(format!("feature tokens of width {}, expected {}", feats.cols(), self.feature_dim));
            }
            let f = g.constant(feats);
            let proj = linear(g, p, "vis_proj", f);
            let scatter = g.constant(scatter_matrix(n, &vis_pos));
            let placed = g.matmul(scatter, proj);
            x = g.add(x, placed);
        }
        let lsp_pos: Vec<usize> = (0..n).filter(|&i| s.ids[i] == Vocab::LSP && s.tags[i].modality == Modality::Visual).collect();
        match inp.state_latents {
            Some(z) => {
                let [k, zd] = g.value(z).shape();
                if k != lsp_pos.len() || zd != d {
                    return shape_err(format!("{k}×{zd} state latents for {} slots of width {d}", lsp_pos.len()));
                }
                let scatter = g.constant(scatter_matrix(n, &lsp_pos));
                let placed = g.matmul(scatter, z);
                x = g.add(x, placed);
            }
            None if !lsp_pos.is_empty() => {
                return shape_err(format!("{} state-latent slots but no latents supplied", lsp_pos.len()));
            }
            None => {}
        }
        let hands: Vec<HandSide> = s.tags.iter().filter_map(|t| t.hand).collect();
        if !hands.is_empty() {
            let mut onehot = Tensor::zeros(n, 2);
            for (i, t) in s.tags.iter().enumerate() {
                if let Some(h) = t.hand {
                    onehot.row_mut(i)[h.as_u8() as usize] = 1.0;
                }
            }
            let oh = g.constant(onehot);
            let he = g.matmul(oh, p.get("hand"));
            x = g.add(x, he);
        }

        let motion_positions = s.motion_positions();
        let align = self.config.resolved_align_layer();
        let mut h = None;
        for l in 0..self.config.layers {
            let a = layer_norm(g, p, &format!("l{l}.ln1"), x);
            let a = attention(g, p, &format!("l{l}.attn"), a, a, self.config.heads, Some(&mask));
            x = g.add(x, a);
            let b = layer_norm(g, p, &format!("l{l}.ln2"), x);
            let b = mlp(g, p, &format!("l{l}.mlp"), b);
            x = g.add(x, b);
            if l + 1 == align {
                h = Some(g.gather_rows(x, &motion_positions));
            }
        }
        let f = layer_norm(g, p, "ln_f", x);
        let logits = linear(g, p, "head", f);
        Ok(ForwardOut { logits, h: h.expect("alignment layer validated"), motion_positions })
    }

    /// Forward pass outside of training: `(logits, h)`.
    pub fn forward(
        &self,
        stream: &TokenStream,
        plan: &MaskPlan,
        visual: &[Vec<f64>],
        state_latents: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, |_| false);
        let z = state_latents.map(|t| g.constant(t.clone()));
        let out = self.forward_graph(&mut g, &p, &StreamInputs { stream, plan, visual, state_latents: z })?;
        Ok((g.value(out.logits).clone(), g.value(out.h).clone()))
    }
}

/// `n × k` selector placing row `j` of a `k`-row input at position `at[j]`.
fn scatter_matrix(n: usize, at: &[usize]) -> Tensor {
    let mut m = Tensor::zeros(n, at.len());
    for (j, &p) in at.iter().enumerate() {
        m.row_mut(p)[j] = 1.0;
    }
    m
}

/// Mean cross-entropy over masked motion slots of a labeled plan. Targets are
/// the stream's own ids.
pub fn mcp_loss(g: &mut Graph, logits: Var, stream: &TokenStream, plan: &MaskPlan) -> Result<Var> {
    if !plan.labeled {
        return Err(Error::InvalidArgument("token loss requested for an unlabeled plan".into()));
    }
    let positions: Vec<usize> = (0..stream.len()).filter(|&p| plan.masked[p] && stream.tags[p].is_motion_slot()).collect();
    if positions.is_empty() {
        return Err(Error::Empty("no masked motion slots".into()));
    }
    let targets: Vec<usize> = positions.iter().map(|&p| stream.ids[p] as usize).collect();
    let rows = g.gather_rows(logits, &positions);
    Ok(g.cross_entropy_rows(rows, &targets))
}

/// Splits the `h` rows of a forward pass by chunk: `(chunk index, K × d)`.
pub fn embeddings_by_chunk(stream: &TokenStream, h: &Tensor) -> Vec<(usize, Tensor)> {
    let positions = stream.motion_positions();
    let mut out: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for (row, &p) in positions.iter().enumerate() {
        let c = stream.tags[p].chunk.unwrap_or(0);
        match out.last_mut() {
            Some((idx, rows)) if *idx == c => rows.push(h.row(row).to_vec()),
            _ => out.push((c, vec![h.row(row).to_vec()])),
        }
    }
    out.into_iter().map(|(c, rows)| (c, Tensor::stack_rows(&rows).expect("equal widths"))).collect()
}

/// Row indices into `h` belonging to chunk `index`.
pub fn chunk_rows(stream: &TokenStream, index: usize) -> Vec<usize> {
    stream
        .motion_positions()
        .iter()
        .enumerate()
        .filter(|(_, &p)| stream.tags[p].chunk == Some(index))
        .map(|(r, _)| r)
        .collect()
}
