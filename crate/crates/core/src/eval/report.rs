//! End-to-end motion generation evaluation.

use serde::{Deserialize, Serialize};

use super::metrics::{mde_with, mpjpe, mwte, pa_mpjpe_with};
use crate::backbone::DecodeConfig;
use crate::backend::{seeded_rng, Rng};
use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::motion::{TokenChunk, Tokenizer};
use crate::training::{Layout, Model, Prepared};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub config_hash: String,
    pub checkpoint_id: String,
    pub episodes: usize,
    /// Episodes without ground-truth motion.
    pub skipped: usize,
    pub mpjpe: MetricSummary,
    pub pa_mpjpe: MetricSummary,
    pub mwte: MetricSummary,
    pub mde: MetricSummary,
    /// Frames whose alignment fell back to rotation and translation.
    pub degenerate_frames: usize,
}

impl MetricReport {
    pub fn metrics(&self) -> [(&'static str, &MetricSummary); 4] {
        [("mpjpe", &self.mpjpe), ("pa_mpjpe", &self.pa_mpjpe), ("mwte", &self.mwte), ("mde", &self.mde)]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,metric,mean,count,config_hash,checkpoint_id\n");
        for (name, m) in self.metrics() {
            s.push_str(&format!("{},{name},{},{},{},{}\n", self.split, m.mean, m.count, self.config_hash, self.checkpoint_id));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores generated chunks against ground truth. `generate` returns the
/// token chunks for one episode; chunks are compared after detokenization.
pub fn eval_motion_generation<F>(
    episodes: &[Prepared],
    tokenizer: &Tokenizer,
    config: &EvalConfig,
    split: &str,
    mut generate: F,
) -> Result<MetricReport>
where
    F: FnMut(usize, &Prepared, &mut Rng) -> Result<Vec<TokenChunk>>,
{
    if episodes.is_empty() {
        return Err(Error::Empty(format!("split {split} has no episodes")));
    }
    let take = if config.max_episodes == 0 { episodes.len() } else { config.max_episodes.min(episodes.len()) };
    let root = seeded_rng(config.seed).substream("decode");
    let (mut sums, mut count, mut skipped, mut degenerate) = ([0.0f64; 4], 0usize, 0usize, 0usize);
    for (i, p) in episodes[..take].iter().enumerate() {
        if p.chunks.is_empty() {
            skipped += 1;
            continue;
        }
        let mut rng = root.substream_indexed("episode", i as u64);
        let generated = generate(i, p, &mut rng)?;
        if generated.len() < p.chunks.len() {
            return Err(Error::InvalidArgument(format!("{} chunks generated for {} ground-truth chunks", generated.len(), p.chunks.len())));
        }
        for (tokens, gt) in generated.iter().zip(&p.chunks) {
            let pred = tokenizer.detokenize_chunk(tokens)?;
            let pa = pa_mpjpe_with(&pred.frames, &gt.frames, config.alignment)?;
            let vals = [mpjpe(&pred.frames, &gt.frames)?, pa.value, mwte(&pred.frames, &gt.frames)?, mde_with(&pred.frames, &gt.frames, config.mde)?];
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
            degenerate += pa.degenerate_frames;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty(format!("split {split} has no labeled episodes")));
    }
    let m = |k: usize| MetricSummary { mean: sums[k] / count as f64, count };
    Ok(MetricReport {
        split: split.to_string(),
        config_hash: String::new(),
        checkpoint_id: String::new(),
        episodes: take,
        skipped,
        mpjpe: m(0),
        pa_mpjpe: m(1),
        mwte: m(2),
        mde: m(3),
        degenerate_frames: degenerate,
    })
}

/// Evaluates a trained model by iterative decoding.
pub fn evaluate_model(
    model: &Model,
    layout: &Layout,
    decode: &DecodeConfig,
    episodes: &[Prepared],
    tokenizer: &Tokenizer,
    config: &EvalConfig,
    split: &str,
) -> Result<MetricReport> {
    eval_motion_generation(episodes, tokenizer, config, split, |_, p, rng| model.generate(p, layout, decode, rng))
}
