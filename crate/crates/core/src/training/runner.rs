//! Config-driven trainers with checkpoint round trips.

use super::checkpoint::Checkpoint;
use super::data::{Layout, Prepared};
use super::model::Model;
use super::posttrain::{posttrain_step, PostMetrics, PosttrainState};
use super::pretrain::{draw_batch, pretrain_step, PretrainState, StepMetrics};
use crate::backend::{seeded_rng, ParamStore, Rng};
use crate::config::{BackboneInit, Config};
use crate::error::{Error, Result};
use crate::flow::FlowHead;
use crate::motion::Tokenizer;
use crate::world::Splits;

pub const PRETRAIN_PHASE: &str = "pretrain";
pub const POSTTRAIN_PHASE: &str = "posttrain";

/// Number of leading wild-train episodes used for a fraction.
pub fn wild_subset_len(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

fn replace_store(dst: &mut ParamStore, src: &ParamStore, name: &str) -> Result<()> {
    if !dst.isomorphic(src) {
        return Err(Error::Checkpoint(format!("parameter tree `{name}` does not match the configured architecture")));
    }
    *dst = src.clone();
    Ok(())
}

/// Fresh model for `seed`.
pub fn init_model(config: &Config, layout: &Layout, seed: u64) -> Result<Model> {
    Model::new(&config.backbone, &config.perceiver, layout, &seeded_rng(seed).substream("init"))
}

/// Model parameters taken from a checkpoint.
pub fn model_from_checkpoint(config: &Config, layout: &Layout, ckpt: &Checkpoint) -> Result<Model> {
    let mut m = init_model(config, layout, 0)?;
    replace_store(&mut m.backbone.params, ckpt.store("backbone")?, "backbone")?;
    replace_store(&mut m.lap, ckpt.store("lap")?, "lap")?;
    replace_store(&mut m.lsp, ckpt.store("lsp")?, "lsp")?;
    Ok(m)
}

fn check_tokenizer(ckpt: &Checkpoint, digest: &str) -> Result<()> {
    if ckpt.tokenizer_digest != digest {
        return Err(Error::Checkpoint("checkpoint was trained with a different tokenizer".into()));
    }
    Ok(())
}

pub struct Pretrainer {
    pub config: Config,
    pub layout: Layout,
    pub state: PretrainState,
    pub lab: Vec<Prepared>,
    pub wild: Vec<Prepared>,
    pub history: Vec<StepMetrics>,
    tokenizer_digest: String,
}

impl Pretrainer {
    pub fn new(config: &Config, tokenizer: &Tokenizer, splits: &Splits) -> Result<Self> {
        let layout = Layout::new(&config.world, tokenizer);
        let lab = layout.prepare_all(&splits.lab_train, tokenizer)?;
        let n = wild_subset_len(splits.wild_train.len(), config.pretrain.wild_fraction);
        let wild = layout.prepare_all(&splits.wild_train[..n], tokenizer)?;
        let model = init_model(config, &layout, config.pretrain.seed)?;
        let state = PretrainState::new(model, &config.pretrain);
        Ok(Self { config: config.clone(), layout, state, lab, wild, history: Vec::new(), tokenizer_digest: tokenizer.digest()? })
    }

    pub fn step(&mut self) -> Result<&StepMetrics> {
        let cfg = &self.config.pretrain;
        let batch = draw_batch(&mut self.state.batch_rng, cfg, &self.lab, &self.wild)?;
        let m = pretrain_step(&mut self.state, &batch, cfg)?;
        self.history.push(m);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Steps until the configured total is reached.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepMetrics)) -> Result<()> {
        while self.state.step < self.config.pretrain.total_steps {
            on_step(self.step()?);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let (first, second) = self.state.opt.moments();
        let m = &self.state.model;
        Ok(Checkpoint {
            phase: PRETRAIN_PHASE.into(),
            config_hash: self.config.pretrain_hash(),
            step: self.state.step,
            tokenizer_digest: self.tokenizer_digest.clone(),
            stores: vec![("backbone".into(), m.backbone.params.clone()), ("lap".into(), m.lap.clone()), ("lsp".into(), m.lsp.clone())],
            opt_step: self.state.opt.steps(),
            opt_first: first.clone(),
            opt_second: second.clone(),
            rngs: vec![("mask".into(), self.state.mask_rng.state()), ("batch".into(), self.state.batch_rng.state())],
            history: serde_json::to_string(&self.history)?,
        })
    }

    pub fn resume(config: &Config, tokenizer: &Tokenizer, splits: &Splits, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.phase != PRETRAIN_PHASE {
            return Err(Error::Checkpoint(format!("expected a {PRETRAIN_PHASE} checkpoint, found {}", ckpt.phase)));
        }
        if ckpt.config_hash != config.pretrain_hash() {
            return Err(Error::Checkpoint("config hash does not match the current config".into()));
        }
        let mut t = Self::new(config, tokenizer, splits)?;
        check_tokenizer(ckpt, &t.tokenizer_digest)?;
        t.state.model = model_from_checkpoint(config, &t.layout, ckpt)?;
        t.state.opt.restore(ckpt.opt_step, ckpt.opt_first.clone(), ckpt.opt_second.clone());
        t.state.step = ckpt.step;
        t.state.mask_rng = Rng::from_state(ckpt.rng("mask")?);
        t.state.batch_rng = Rng::from_state(ckpt.rng("batch")?);
        t.history = serde_json::from_str(&ckpt.history)?;
        Ok(t)
    }
}

pub struct Posttrainer {
    pub config: Config,
    pub layout: Layout,
    pub state: PosttrainState,
    pub train: Vec<Prepared>,
    pub history: Vec<PostMetrics>,
    tokenizer_digest: String,
}

impl Posttrainer {
    /// Starts from `pretrained` unless the config asks for a random backbone
    /// (or no pretrained model is given).
    pub fn new(config: &Config, tokenizer: &Tokenizer, splits: &Splits, pretrained: Option<&Model>) -> Result<Self> {
        let layout = Layout::new(&config.world, tokenizer);
        let train = layout.prepare_all(&splits.robot_train, tokenizer)?;
        let pc = &config.posttrain;
        let model = match (pc.init, pretrained) {
            (BackboneInit::Pretrained, Some(m)) => m.clone(),
            (BackboneInit::Pretrained, None) => {
                return Err(Error::InvalidArgument("post-training from a pretrained backbone needs a pretrained model".into()))
            }
            (BackboneInit::Random, _) => init_model(config, &layout, pc.seed)?,
        };
        let w = &config.world;
        let flow = FlowHead::new(
            config.flow.clone(),
            w.action_horizon,
            w.action_dims,
            w.proprio_dims,
            config.backbone.d_model,
            &mut seeded_rng(pc.seed).substream("flow-init"),
        )?;
        let state = PosttrainState::new(model, flow, pc);
        Ok(Self { config: config.clone(), layout, state, train, history: Vec::new(), tokenizer_digest: tokenizer.digest()? })
    }

    pub fn step(&mut self) -> Result<&PostMetrics> {
        let cfg = &self.config.posttrain;
        let batch = draw_batch(&mut self.state.batch_rng, cfg, &self.train, &[])?;
        let m = posttrain_step(&mut self.state, &batch, cfg)?;
        self.history.push(m);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run(&mut self, mut on_step: impl FnMut(&PostMetrics)) -> Result<()> {
        while self.state.step < self.config.posttrain.total_steps {
            on_step(self.step()?);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let (first, second) = self.state.opt.moments();
        let m = &self.state.model;
        Ok(Checkpoint {
            phase: POSTTRAIN_PHASE.into(),
            config_hash: self.config.posttrain_hash(),
            step: self.state.step,
            tokenizer_digest: self.tokenizer_digest.clone(),
            stores: vec![
                ("backbone".into(), m.backbone.params.clone()),
                ("lap".into(), m.lap.clone()),
                ("lsp".into(), m.lsp.clone()),
                ("flow".into(), self.state.flow.params.clone()),
            ],
            opt_step: self.state.opt.steps(),
            opt_first: first.clone(),
            opt_second: second.clone(),
            rngs: vec![("batch".into(), self.state.batch_rng.state()), ("noise".into(), self.state.noise_rng.state())],
            history: serde_json::to_string(&self.history)?,
        })
    }

    pub fn resume(config: &Config, tokenizer: &Tokenizer, splits: &Splits, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.phase != POSTTRAIN_PHASE {
            return Err(Error::Checkpoint(format!("expected a {POSTTRAIN_PHASE} checkpoint, found {}", ckpt.phase)));
        }
        if ckpt.config_hash != config.posttrain_hash() {
            return Err(Error::Checkpoint("config hash does not match the current config".into()));
        }
        let layout = Layout::new(&config.world, tokenizer);
        let model = model_from_checkpoint(config, &layout, ckpt)?;
        let mut t = Self::new(config, tokenizer, splits, Some(&model))?;
        check_tokenizer(ckpt, &t.tokenizer_digest)?;
        t.state.model = model;
        replace_store(&mut t.state.flow.params, ckpt.store("flow")?, "flow")?;
        t.state.opt.restore(ckpt.opt_step, ckpt.opt_first.clone(), ckpt.opt_second.clone());
        t.state.step = ckpt.step;
        t.state.batch_rng = Rng::from_state(ckpt.rng("batch")?);
        t.state.noise_rng = Rng::from_state(ckpt.rng("noise")?);
        t.history = serde_json::from_str(&ckpt.history)?;
        Ok(t)
    }

    /// Flow head with the parameters from a post-training checkpoint.
    pub fn flow_from_checkpoint(config: &Config, ckpt: &Checkpoint) -> Result<FlowHead> {
        let w = &config.world;
        let mut flow = FlowHead::new(config.flow.clone(), w.action_horizon, w.action_dims, w.proprio_dims, config.backbone.d_model, &mut seeded_rng(0))?;
        replace_store(&mut flow.params, ckpt.store("flow")?, "flow")?;
        Ok(flow)
    }
}

/// CSV of pretraining metrics, preceded by a config-hash comment line.
pub fn pretrain_metrics_csv(config_hash: &str, history: &[StepMetrics]) -> String {
    let mut s = format!("# config_hash={config_hash}\nstep,lr,total_loss,mcp,align,grad_norm,z_std\n");
    for m in history {
        let mcp = m.mcp.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{},{},{}\n", m.step, m.lr, m.total_loss, mcp, m.align, m.grad_norm, m.z_std));
    }
    s
}

pub fn posttrain_metrics_csv(config_hash: &str, history: &[PostMetrics]) -> String {
    let mut s = format!("# config_hash={config_hash}\nstep,lr,total_loss,grad_norm\n");
    for m in history {
        s.push_str(&format!("{},{},{},{}\n", m.step, m.lr, m.total_loss, m.grad_norm));
    }
    s
}
