//! Run configuration: one JSON document with a section per subsystem.
//!
//! Files are merged onto the defaults, so a file only needs the keys it
//! changes. Unknown keys are rejected, as are `--set` overrides naming keys
//! that do not exist.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneConfig, DecodeConfig};
use crate::error::{Error, Result};
use crate::eval::{Alignment, MdeMode};
use crate::flow::FlowConfig;
use crate::motion::TokenizerConfig;
use crate::perceiver::PerceiverConfig;
use crate::world::WorldConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Separate LAP and LSP with routed gradients and cross EMA.
    #[default]
    Decoupled,
    /// One perceiver serving both roles, trained end to end, no EMA.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackboneInit {
    #[default]
    Pretrained,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    /// Weight of the alignment term.
    pub lambda: f64,
    /// EMA coefficient.
    pub alpha: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    /// Labeled-lab to wild samples per batch, as a ratio.
    pub lab_share: usize,
    pub wild_share: usize,
    /// Fraction of the wild training split available to pretraining.
    pub wild_fraction: f64,
    pub ema: bool,
    pub coupling: Coupling,
    /// Post-training only: where the backbone comes from.
    pub init: BackboneInit,
    /// Post-training only: backbone learning rate relative to `base_lr`
    /// (0 freezes it).
    pub backbone_lr_scale: f64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        Self {
            base_lr: 3e-5,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            warmup_fraction: 0.05,
            clip_norm: 1.0,
            lambda: 0.5,
            alpha: 0.999,
            batch_size: 8,
            total_steps: 2000,
            seed: 1,
            lab_share: 2,
            wild_share: 1,
            wild_fraction: 1.0,
            ema: true,
            coupling: Coupling::Decoupled,
            init: BackboneInit::Pretrained,
            backbone_lr_scale: 1.0,
            checkpoint_every: 0,
        }
    }

    pub fn posttrain_default() -> Self {
        Self { base_lr: 1e-4, total_steps: 600, lab_share: 1, wild_share: 0, ..Self::pretrain_default() }
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{section}.{m}")));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction {} must lie in (0, 1)", self.warmup_fraction));
        }
        for (name, v) in [("base_lr", self.base_lr), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.lambda >= 0.0) {
            return bad("weight_decay and lambda must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha {} must lie in [0, 1)", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return bad("batch_size and total_steps must be positive".into());
        }
        if self.lab_share + self.wild_share == 0 {
            return bad("lab_share + wild_share must be positive".into());
        }
        if !(self.backbone_lr_scale >= 0.0 && self.backbone_lr_scale.is_finite()) {
            return bad("backbone_lr_scale must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.wild_fraction) {
            return bad("wild_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate at most this many episodes per split (0: all).
    pub max_episodes: usize,
    pub seed: u64,
    pub mde: MdeMode,
    pub alignment: Alignment,
    /// Samples per split for the embedding projection.
    pub projection_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_episodes: 0, seed: 5, mde: MdeMode::Distance, alignment: Alignment::Similarity, projection_samples: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { fractions: vec![0.0, 0.25, 0.5, 1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub world: WorldConfig,
    pub tokenizer: TokenizerConfig,
    pub backbone: BackboneConfig,
    pub perceiver: PerceiverConfig,
    pub flow: FlowConfig,
    pub decode: DecodeConfig,
    pub pretrain: TrainConfig,
    pub posttrain: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            tokenizer: TokenizerConfig::default(),
            backbone: BackboneConfig::default(),
            perceiver: PerceiverConfig::default(),
            flow: FlowConfig::default(),
            decode: DecodeConfig::default(),
            pretrain: TrainConfig::pretrain_default(),
            posttrain: TrainConfig::posttrain_default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(Error::Config(format!("unknown key `{sub}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.backbone.validate()?;
        self.pretrain.validate("pretrain")?;
        self.posttrain.validate("posttrain")?;
        if self.tokenizer.chunk_len != self.world.chunk_len || self.tokenizer.finger_dims != self.world.finger_dims {
            return Err(Error::Config("tokenizer chunk_len / finger_dims must match the world".into()));
        }
        if self.sweep.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("sweep fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Defaults patched by `json`, then by dotted `key=value` overrides.
    pub fn from_json_with_overrides(json: &str, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Config::default())?;
        let patch: Value = serde_json::from_str(json)?;
        if !patch.is_object() {
            return Err(Error::Config("config root must be a JSON object".into()));
        }
        merge(&mut value, patch, "")?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: Config = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of the canonical (compact, declaration-ordered) JSON form.
    pub fn hash(&self) -> String {
        digest_json(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Digest of the sections that determine a pretrained model.
    pub fn pretrain_hash(&self) -> String {
        digest_json(&serde_json::json!({
            "world": self.world,
            "tokenizer": self.tokenizer,
            "backbone": self.backbone,
            "perceiver": self.perceiver,
            "pretrain": self.pretrain,
        }))
    }

    /// Digest of the sections that determine a post-trained model.
    pub fn posttrain_hash(&self) -> String {
        digest_json(&serde_json::json!({
            "pretrain": self.pretrain_hash(),
            "flow": self.flow,
            "posttrain": self.posttrain,
        }))
    }
}

fn digest_json(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("json serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// `a.b.c=value`; the value is parsed as JSON when possible, else taken as a
/// string.
pub fn apply_override(root: &mut Value, entry: &str) -> Result<()> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{entry}` is not key=value")))?;
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    }
    if slot.is_object() {
        return Err(Error::Config(format!("`{key}` is a section, not a value")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    *slot = parsed;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = Config::from_json_with_overrides("{}", &[]).unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.pretrain.base_lr, 3e-5);
        assert_eq!(c.posttrain.base_lr, 1e-4);
    }

    #[test]
    fn partial_sections_keep_their_own_defaults() {
        let c = Config::from_json_with_overrides(r#"{"posttrain": {"batch_size": 4}}"#, &[]).unwrap();
        assert_eq!(c.posttrain.batch_size, 4);
        assert_eq!(c.posttrain.base_lr, 1e-4);
    }

    #[test]
    fn overrides_are_validated() {
        let c = Config::from_json_with_overrides("{}", &["pretrain.lambda=0.25".into(), "pretrain.coupling=shared".into()]).unwrap();
        assert_eq!(c.pretrain.lambda, 0.25);
        assert_eq!(c.pretrain.coupling, Coupling::Shared);
        assert!(Config::from_json_with_overrides("{}", &["pretrain.lamda=1".into()]).is_err());
        assert!(Config::from_json_with_overrides("{}", &["pretrain.lambda=abc".into()]).is_err());
        assert!(Config::from_json_with_overrides("{}", &["pretrain=1".into()]).is_err());
        assert!(Config::from_json_with_overrides(r#"{"bogus": 1}"#, &[]).is_err());
        assert!(Config::from_json_with_overrides("{}", &["pretrain.warmup_fraction=0".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.pretrain.seed += 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.eval.seed += 1;
        assert_eq!(a.pretrain_hash(), c.pretrain_hash());
        assert_ne!(a.hash(), c.hash());
    }
}
