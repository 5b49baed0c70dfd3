//! Flow-matching post-training on robot episodes. The action head learns,
//! the backbone at a configurable relative rate; perceivers and tokenizer
//! stay frozen.

use serde::{Deserialize, Serialize};

use super::data::Prepared;
use super::model::Model;
use super::optim::{clip_global_norm, AdamW};
use super::schedule::lr_schedule;
use crate::backbone::{chunk_rows, MaskPlan, StreamInputs};
use crate::backend::{seeded_rng, Bound, Graph, Rng, Tensor, Var};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::flow::{fm_loss, noise_action, FlowHead};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostMetrics {
    pub step: u64,
    pub lr: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct PosttrainState {
    pub model: Model,
    pub flow: FlowHead,
    pub opt: AdamW,
    pub step: u64,
    pub batch_rng: Rng,
    pub noise_rng: Rng,
}

impl PosttrainState {
    pub fn new(model: Model, flow: FlowHead, config: &TrainConfig) -> Self {
        let root = seeded_rng(config.seed);
        Self {
            model,
            flow,
            opt: AdamW::new(config.beta1, config.beta2, config.weight_decay),
            step: 0,
            batch_rng: root.substream("post-batch"),
            noise_rng: root.substream("post-noise"),
        }
    }
}

/// Conditioning for the action head: first-chunk states predicted from the
/// prefix alone.
fn condition(g: &mut Graph, model: &Model, bb: &Bound, p: &Prepared) -> Result<Var> {
    let z = model.state_latents(p)?;
    let z = g.constant(z);
    let plan = MaskPlan::generate_chunk(&p.context, 1);
    let out = model.backbone.forward_graph(g, bb, &StreamInputs { stream: &p.context, plan: &plan, visual: &p.visual, state_latents: Some(z) })?;
    let rows = chunk_rows(&p.context, 1);
    Ok(g.gather_rows(out.h, &rows))
}

pub fn posttrain_step(state: &mut PosttrainState, batch: &[&Prepared], config: &TrainConfig) -> Result<PostMetrics> {
    if batch.is_empty() {
        return Err(Error::Empty("post-training batch".into()));
    }
    let mut g = Graph::new();
    let train_bb = config.backbone_lr_scale > 0.0;
    let bb = state.model.backbone.params.bind(&mut g, |_| train_bb);
    let fb = state.flow.params.bind(&mut g, |_| true);
    let (h, d) = (state.flow.horizon, state.flow.action_dims);
    let mut losses = Vec::with_capacity(batch.len());
    for p in batch {
        let a = p
            .actions
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("episode {} has no action labels", p.seed)))?;
        let cond = condition(&mut g, &state.model, &bb, p)?;
        let eps = Tensor::from_rows(h, d, state.noise_rng.normal_vec(h * d, 1.0));
        let tau = state.noise_rng.uniform();
        let a_tau = g.constant(noise_action(a, tau, &eps)?);
        let v = state.flow.velocity_graph(&mut g, &fb, cond, a_tau, &p.proprio0, tau)?;
        losses.push(fm_loss(&mut g, v, a, &eps, state.flow.config.sign)?);
    }
    let all = g.concat_rows(&losses);
    let total = g.mean(all);
    let grads = g.backward(total);
    let mut g_bb = bb.collect_grads(&g, &grads);
    let mut g_flow = fb.collect_grads(&g, &grads);
    let grad_norm = clip_global_norm(&mut [&mut g_bb, &mut g_flow], config.clip_norm);
    let lr = lr_schedule(state.step + 1, config.total_steps, config.base_lr, config.warmup_fraction);
    state.opt.begin_step();
    if train_bb {
        state.opt.update("backbone", &mut state.model.backbone.params, &g_bb, lr * config.backbone_lr_scale);
    }
    state.opt.update("flow", &mut state.flow.params, &g_flow, lr);
    state.step += 1;
    Ok(PostMetrics { step: state.step, lr, total_loss: g.value(total).item(), grad_norm })
}

/// Sampled action chunk for a prepared episode.
pub fn predict_actions(model: &Model, flow: &FlowHead, p: &Prepared, rng: &mut Rng) -> Result<Tensor> {
    let mut g = Graph::new();
    let bb = model.backbone.params.bind(&mut g, |_| false);
    let cond = condition(&mut g, model, &bb, p)?;
    let cond = g.value(cond).clone();
    flow.sample_actions(&cond, &p.proprio0, flow.config.steps, rng)
}

/// Mean squared action error over `episodes`, averaging `samples` sampler
/// draws per episode. Each episode uses its own indexed noise stream.
pub fn action_mse(model: &Model, flow: &FlowHead, episodes: &[Prepared], seed: u64, samples: usize) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Empty("no evaluation episodes".into()));
    }
    let root = seeded_rng(seed).substream("action-eval");
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, p) in episodes.iter().enumerate() {
        let a = p.actions.as_ref().ok_or_else(|| Error::InvalidArgument(format!("episode {} has no action labels", p.seed)))?;
        let mut rng = root.substream_indexed("episode", i as u64);
        for _ in 0..samples.max(1) {
            let pred = predict_actions(model, flow, p, &mut rng)?;
            total += pred.data().iter().zip(a.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            count += a.len();
        }
    }
    Ok(total / count as f64)
}
