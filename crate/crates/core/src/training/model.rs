//! Backbone plus the two perceivers, and graph-free inference helpers.

use super::data::{Layout, Prepared};
use crate::backbone::{chunk_rows, decode_chunk_with, Backbone, BackboneConfig, DecodeConfig, MaskPlan};
use crate::backend::{ParamStore, Rng, Tensor};
use crate::error::{Error, Result};
use crate::motion::{TokenChunk, TokenStream};
use crate::perceiver::{PerceiverArch, PerceiverConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub backbone: Backbone,
    pub arch: PerceiverArch,
    pub lap: ParamStore,
    pub lsp: ParamStore,
}

impl Model {
    /// Fresh model; the state perceiver starts as a copy of the action perceiver.
    pub fn new(backbone: &BackboneConfig, perceiver: &PerceiverConfig, layout: &Layout, rng: &Rng) -> Result<Self> {
        let backbone = Backbone::new(backbone.clone(), layout.vocab, layout.token_dim, &mut rng.substream("backbone"))?;
        let arch = PerceiverArch {
            config: perceiver.clone(),
            feature_dim: layout.token_dim,
            tokens_per_frame: layout.tokens_per_frame,
            latents: layout.slots_per_chunk(),
            out_dim: backbone.config.d_model,
        };
        let lap = arch.init(&mut rng.substream("perceiver"))?;
        let lsp = lap.clone();
        Ok(Self { backbone, arch, lap, lsp })
    }

    pub fn state_latents(&self, p: &Prepared) -> Result<Tensor> {
        self.arch.latents(&self.lsp, &p.first_frame, &p.first_frame, p.hand)
    }

    /// Latent actions of chunk `index` (1-based).
    pub fn action_latents(&self, p: &Prepared, index: usize) -> Result<Tensor> {
        let (a, b) = p.boundaries.get(index - 1).ok_or_else(|| Error::InvalidArgument(format!("no chunk {index}")))?;
        self.arch.latents(&self.lap, a, b, p.hand)
    }

    /// Logits and alignment-layer states for `stream` under `plan`.
    pub fn score(&self, p: &Prepared, stream: &TokenStream, plan: &MaskPlan, z: &Tensor) -> Result<(Tensor, Tensor)> {
        self.backbone.forward(stream, plan, &p.visual, Some(z))
    }

    /// Decodes every chunk left to right, each conditioned on the ones before.
    pub fn generate(&self, p: &Prepared, layout: &Layout, decode: &DecodeConfig, rng: &mut Rng) -> Result<Vec<TokenChunk>> {
        let z = self.state_latents(p)?;
        let mut out: Vec<TokenChunk> = Vec::with_capacity(layout.chunks);
        for _ in 0..layout.chunks {
            let ctx = layout.stream(&p.instruction, p.hand, &out, 1)?;
            let chunk = decode_chunk_with(&ctx, decode, rng, |s, plan| Ok(self.score(p, s, plan, &z)?.0))?;
            out.push(chunk);
        }
        Ok(out)
    }

    /// Alignment-layer states of chunk `index` when it is the masked target
    /// after the ground-truth (or placeholder) chunks before it.
    pub fn predictive_embedding(&self, p: &Prepared, index: usize) -> Result<Tensor> {
        let z = self.state_latents(p)?;
        let plan = MaskPlan::generate_chunk(&p.stream, index);
        let (_, h) = self.score(p, &p.stream, &plan, &z)?;
        let rows = chunk_rows(&p.stream, index);
        let d = h.cols();
        let data = rows.iter().flat_map(|&r| h.row(r).to_vec()).collect();
        Ok(Tensor::from_rows(rows.len(), d, data))
    }
}
