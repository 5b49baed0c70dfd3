//! Hybrid-objective pretraining: masked chunk prediction on labeled streams
//! plus latent-action alignment on every stream.

use serde::{Deserialize, Serialize};

use super::data::Prepared;
use super::model::Model;
use super::optim::{clip_global_norm, AdamW};
use super::schedule::lr_schedule;
use crate::backbone::{chunk_rows, mcp_loss, sample_hybrid_mask, StreamInputs};
use crate::backend::{Graph, Rng, Var};
use crate::config::{Coupling, TrainConfig};
use crate::error::{Error, Result};
use crate::perceiver::{align_loss, decoupled_ema_update, latent_spread, lap_trainable, lsp_trainable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub labeled: bool,
    pub mcp: Option<f64>,
    pub align: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub total_loss: f64,
    /// Mean over the labeled samples; absent when the batch has none.
    pub mcp: Option<f64>,
    pub align: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub z_std: f64,
    pub samples: Vec<SampleLoss>,
}

/// Mutable training state: model, optimizer and the random streams that
/// drive masking and batch selection.
#[derive(Clone, Debug)]
pub struct PretrainState {
    pub model: Model,
    pub opt: AdamW,
    pub step: u64,
    pub mask_rng: Rng,
    pub batch_rng: Rng,
}

impl PretrainState {
    pub fn new(model: Model, config: &TrainConfig) -> Self {
        let root = crate::backend::seeded_rng(config.seed);
        Self {
            model,
            opt: AdamW::new(config.beta1, config.beta2, config.weight_decay),
            step: 0,
            mask_rng: root.substream("mask"),
            batch_rng: root.substream("batch"),
        }
    }
}

pub fn pretrain_step(state: &mut PretrainState, batch: &[&Prepared], config: &TrainConfig) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Empty("pretraining batch".into()));
    }
    let model = &state.model;
    let mut g = Graph::new();
    let bb = model.backbone.params.bind(&mut g, |_| true);
    let shared = config.coupling == Coupling::Shared;
    let lsp_b = if shared { model.lsp.bind(&mut g, |_| true) } else { model.lsp.bind(&mut g, lsp_trainable) };
    let lap_b = if shared { lsp_b.clone() } else { model.lap.bind(&mut g, lap_trainable) };

    let mut losses: Vec<Var> = Vec::with_capacity(batch.len());
    let mut samples = Vec::with_capacity(batch.len());
    let mut z_flat: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
    for p in batch {
        let zs = model.arch.lsp_forward(&mut g, &lsp_b, &p.first_frame, p.hand)?;
        let plan = sample_hybrid_mask(&p.stream, &mut state.mask_rng)?;
        let out = model.backbone.forward_graph(
            &mut g,
            &bb,
            &StreamInputs { stream: &p.stream, plan: &plan, visual: &p.visual, state_latents: Some(zs) },
        )?;
        let mut aligns = Vec::with_capacity(p.boundaries.len());
        let mut flat = Vec::new();
        for (i, (a, b)) in p.boundaries.iter().enumerate() {
            let rows = chunk_rows(&p.stream, i + 1);
            let h = g.gather_rows(out.h, &rows);
            let z = model.arch.lap_forward(&mut g, &lap_b, a, b, p.hand)?;
            flat.extend_from_slice(g.value(z).data());
            aligns.push(align_loss(&mut g, h, z)?);
        }
        let stacked = g.concat_rows(&aligns);
        let align = g.mean(stacked);
        let weighted = g.scale(align, config.lambda);
        let (loss, mcp) = if plan.labeled {
            let m = mcp_loss(&mut g, out.logits, &p.stream, &plan)?;
            (g.add(m, weighted), Some(g.value(m).item()))
        } else {
            (weighted, None)
        };
        samples.push(SampleLoss { labeled: plan.labeled, mcp, align: g.value(align).item() });
        z_flat.push(flat);
        losses.push(loss);
    }
    let all = g.concat_rows(&losses);
    let total = g.mean(all);
    let grads = g.backward(total);
    let mut g_bb = bb.collect_grads(&g, &grads);
    let mut g_lsp = lsp_b.collect_grads(&g, &grads);
    let mut g_lap = if shared { Default::default() } else { lap_b.collect_grads(&g, &grads) };
    let grad_norm = clip_global_norm(&mut [&mut g_bb, &mut g_lsp, &mut g_lap], config.clip_norm);

    let lr = lr_schedule(state.step + 1, config.total_steps, config.base_lr, config.warmup_fraction);
    state.opt.begin_step();
    let model = &mut state.model;
    state.opt.update("backbone", &mut model.backbone.params, &g_bb, lr);
    state.opt.update("lsp", &mut model.lsp, &g_lsp, lr);
    if shared {
        model.lap = model.lsp.clone();
    } else {
        state.opt.update("lap", &mut model.lap, &g_lap, lr);
        if config.ema {
            decoupled_ema_update(&mut model.lap, &mut model.lsp, config.alpha)?;
        }
    }
    state.step += 1;

    let labeled: Vec<f64> = samples.iter().filter_map(|s| s.mcp).collect();
    Ok(StepMetrics {
        step: state.step,
        lr,
        total_loss: g.value(total).item(),
        mcp: (!labeled.is_empty()).then(|| labeled.iter().sum::<f64>() / labeled.len() as f64),
        align: samples.iter().map(|s| s.align).sum::<f64>() / samples.len() as f64,
        grad_norm,
        z_std: latent_spread(&z_flat),
        samples,
    })
}

/// Draws a batch with the configured lab:wild composition. With one pool
/// empty the other fills the batch.
pub fn draw_batch<'a>(rng: &mut Rng, config: &TrainConfig, lab: &'a [Prepared], wild: &'a [Prepared]) -> Result<Vec<&'a Prepared>> {
    if lab.is_empty() && wild.is_empty() {
        return Err(Error::Empty("no training episodes".into()));
    }
    let b = config.batch_size;
    let share = config.wild_share as f64 / (config.lab_share + config.wild_share) as f64;
    let n_wild = if wild.is_empty() { 0 } else if lab.is_empty() { b } else { (b as f64 * share).round() as usize };
    let mut out = Vec::with_capacity(b);
    for _ in 0..b - n_wild {
        out.push(&lab[rng.below(lab.len())]);
    }
    for _ in 0..n_wild {
        out.push(&wild[rng.below(wild.len())]);
    }
    Ok(out)
}
