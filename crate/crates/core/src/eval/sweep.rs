//! Pretraining sweep over the share of wild data, with labeled data fixed.

use super::report::{evaluate_model, MetricReport};
use crate::config::Config;
use crate::error::Result;
use crate::motion::Tokenizer;
use crate::training::{Layout, Model, Pretrainer, StepMetrics};
use crate::world::Splits;

pub struct SweepPoint {
    pub fraction: f64,
    /// Wild-split evaluation of the model pretrained at this fraction.
    pub report: MetricReport,
    pub history: Vec<StepMetrics>,
    pub model: Model,
}

/// The config with the pretraining wild share set to `fraction`.
pub fn sweep_config(config: &Config, fraction: f64) -> Config {
    let mut c = config.clone();
    c.pretrain.wild_fraction = fraction;
    c
}

pub fn run_sweep_point(config: &Config, tokenizer: &Tokenizer, splits: &Splits, fraction: f64) -> Result<SweepPoint> {
    let cfg = sweep_config(config, fraction);
    let mut trainer = Pretrainer::new(&cfg, tokenizer, splits)?;
    trainer.run(|_| {})?;
    let layout = Layout::new(&cfg.world, tokenizer);
    let eval = layout.prepare_all(&splits.wild_eval, tokenizer)?;
    let model = trainer.state.model.clone();
    let mut report = evaluate_model(&model, &layout, &cfg.decode, &eval, tokenizer, &cfg.eval, "wild_eval")?;
    report.config_hash = cfg.hash();
    report.checkpoint_id = trainer.checkpoint()?.id()?;
    Ok(SweepPoint { fraction, report, history: trainer.history, model })
}

/// One point per configured fraction, in order.
pub fn run_sweep(config: &Config, tokenizer: &Tokenizer, splits: &Splits, mut on_point: impl FnMut(&SweepPoint)) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(config.sweep.fractions.len());
    for &f in &config.sweep.fractions {
        let p = run_sweep_point(config, tokenizer, splits, f)?;
        on_point(&p);
        out.push(p);
    }
    Ok(out)
}
