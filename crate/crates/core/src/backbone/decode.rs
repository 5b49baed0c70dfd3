//! Iterative masked-chunk decoding.

use serde::{Deserialize, Serialize};

use super::mask::MaskPlan;
use crate::backend::{Rng, Tensor};
use crate::error::{Error, Result};
use crate::motion::{Modality, MotionPart, TokenChunk, TokenStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Fraction of the chunk committed per pass.
    pub step_fraction: f64,
    pub runs: usize,
    /// Scale of the Gumbel noise added to log-confidences when choosing which
    /// slots to commit; `0` gives a purely greedy order.
    pub selection_noise: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { step_fraction: 0.05, runs: 5, selection_noise: 1.0 }
    }
}

impl DecodeConfig {
    pub fn passes(&self) -> usize {
        (1.0 / self.step_fraction - 1e-9).ceil() as usize
    }

    pub fn per_pass(&self, k: usize) -> usize {
        ((self.step_fraction * k as f64 - 1e-9).ceil() as usize).max(1)
    }
}

/// Decodes the final, fully masked chunk of `context`. `score` returns logits
/// for every position of the stream given the current mask; ids are
/// restricted to the part range of each slot.
pub fn decode_chunk_with<F>(context: &TokenStream, config: &DecodeConfig, rng: &mut Rng, mut score: F) -> Result<TokenChunk>
where
    F: FnMut(&TokenStream, &MaskPlan) -> Result<Tensor>,
{
    if !(config.step_fraction > 0.0 && config.step_fraction <= 1.0) || config.runs == 0 {
        return Err(Error::InvalidArgument("decode needs step_fraction in (0, 1] and at least one run".into()));
    }
    let spans = context.chunk_spans()?;
    let last = spans.last().ok_or_else(|| Error::InvalidArgument("context has no chunk to decode".into()))?.clone();
    let slots: Vec<usize> = last.slots().collect();
    if slots.iter().any(|&p| context.tags[p].modality != Modality::Mask) {
        return Err(Error::InvalidArgument("the final chunk must be fully masked".into()));
    }
    let k = slots.len();
    let per_pass = config.per_pass(k);
    let mut runs: Vec<Vec<u32>> = Vec::with_capacity(config.runs);
    for _ in 0..config.runs {
        let mut stream = context.clone();
        let mut pending: Vec<usize> = slots.clone();
        for _ in 0..config.passes() {
            if pending.is_empty() {
                break;
            }
            let mut plan = MaskPlan::visible(&stream);
            for &p in &pending {
                plan.masked[p] = true;
            }
            let logits = score(&stream, &plan)?;
            let mut candidates: Vec<(f64, usize, u32)> = pending
                .iter()
                .map(|&p| {
                    let part = context.tags[p].part.unwrap_or(MotionPart::Wrist);
                    let (lo, hi) = stream.vocab.part_range(part);
                    let (id, logp) = constrained_argmax(logits.row(p), lo, hi);
                    let noise = if config.selection_noise > 0.0 { config.selection_noise * gumbel(rng) } else { 0.0 };
                    (logp + noise, p, id)
                })
                .collect();
            // highest score first, ties to the earliest position
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, p, id) in candidates.iter().take(per_pass) {
                stream.ids[p] = id;
                stream.tags[p].modality = Modality::Motion;
            }
            let committed: Vec<usize> = candidates.iter().take(per_pass).map(|c| c.1).collect();
            pending.retain(|p| !committed.contains(p));
        }
        runs.push(slots.iter().map(|&p| stream.ids[p]).collect());
    }
    let voted = majority_vote(&runs);
    let mut out = TokenChunk { wrist_ids: Vec::new(), finger_ids: Vec::new(), hand_side: last.hand };
    for (&p, &id) in slots.iter().zip(&voted) {
        match context.tags[p].part {
            Some(MotionPart::Wrist) => out.wrist_ids.push(id - context.vocab.wrist_base()),
            Some(MotionPart::Finger) => out.finger_ids.push(id - context.vocab.finger_base()),
            None => return Err(Error::Untagged(p)),
        }
    }
    Ok(out)
}

fn gumbel(rng: &mut Rng) -> f64 {
    let u = rng.uniform().max(1e-300);
    -(-u.ln()).ln()
}

/// Best id in `[lo, hi)` and its log-probability under the full softmax.
fn constrained_argmax(row: &[f64], lo: u32, hi: u32) -> (u32, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut best = lo;
    for id in lo..hi {
        if row[id as usize] > row[best as usize] {
            best = id;
        }
    }
    (best, row[best as usize] - lse)
}

/// Per position, the most frequent id across runs. Ties go to the tied id
/// produced by the earliest run.
pub fn majority_vote(runs: &[Vec<u32>]) -> Vec<u32> {
    let k = runs.first().map_or(0, |r| r.len());
    (0..k)
        .map(|i| {
            let mut best = runs[0][i];
            let mut best_count = 0;
            for run in runs {
                let id = run[i];
                let count = runs.iter().filter(|r| r[i] == id).count();
                if count > best_count {
                    best = id;
                    best_count = count;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_prefers_majority_then_first_run() {
        let runs = vec![vec![1, 5, 7], vec![2, 5, 8], vec![2, 6, 9]];
        assert_eq!(majority_vote(&runs), vec![2, 5, 7]);
        assert_eq!(majority_vote(&[vec![3, 4]]), vec![3, 4]);
    }

    #[test]
    fn pass_arithmetic() {
        let c = DecodeConfig::default();
        assert_eq!(c.passes(), 20);
        assert_eq!(c.per_pass(20), 1);
        assert_eq!(c.per_pass(16), 1);
        assert_eq!(c.per_pass(64), 4);
    }

    #[test]
    fn constrained_argmax_respects_range() {
        let row = [9.0, 1.0, 3.0, 2.0];
        let (id, lp) = constrained_argmax(&row, 1, 4);
        assert_eq!(id, 2);
        assert!(lp < 0.0);
    }
}
