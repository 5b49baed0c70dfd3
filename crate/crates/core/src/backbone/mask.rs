//! Chunk-aware attention structure and hybrid masking plans.

use crate::backend::{Rng, Tensor};
use crate::error::{Error, Result};
use crate::motion::{Modality, TokenStream};

/// Target-chunk mask ratios: the 0.1-step grid from 0.05 plus full masking.
pub const TARGET_RATIO_GRID: [f64; 11] = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95, 1.0];
pub const SUFFIX_MASK_RATE: f64 = 0.05;

/// Chunk index (1-based) of every position, `None` for the prefix.
fn position_chunks(stream: &TokenStream) -> Result<Vec<Option<usize>>> {
    if stream.tags.len() != stream.ids.len() {
        return Err(Error::Untagged(stream.tags.len().min(stream.ids.len())));
    }
    stream
        .tags
        .iter()
        .enumerate()
        .map(|(p, t)| match t.modality {
            Modality::Instruction | Modality::Visual => Ok(None),
            Modality::Motion | Modality::Mask | Modality::Delimiter => t.chunk.map(Some).ok_or(Error::Untagged(p)),
        })
        .collect()
}

/// `allowed[q][k]`: the prefix attends within itself; a chunk position sees the
/// prefix, every earlier chunk and its own chunk.
pub fn attention_allowed(stream: &TokenStream) -> Result<Vec<Vec<bool>>> {
    let chunks = position_chunks(stream)?;
    Ok(chunks
        .iter()
        .map(|q| {
            chunks
                .iter()
                .map(|k| match (q, k) {
                    (_, None) => true,
                    (None, Some(_)) => false,
                    (Some(a), Some(b)) => b <= a,
                })
                .collect()
        })
        .collect())
}

/// Additive score mask: `0` where attention is allowed, `-inf` elsewhere.
pub fn build_attention_mask(stream: &TokenStream) -> Result<Tensor> {
    let allowed = attention_allowed(stream)?;
    let n = allowed.len();
    let data = allowed.iter().flat_map(|row| row.iter().map(|&a| if a { 0.0 } else { f64::NEG_INFINITY })).collect();
    Ok(Tensor::from_rows(n, n, data))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChunkRole {
    Context,
    Target,
    Suffix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub labeled: bool,
    /// 1-based target chunk; `None` for unlabeled streams.
    pub target_chunk: Option<usize>,
    pub target_ratio: Option<f64>,
    /// Per stream position.
    pub masked: Vec<bool>,
    /// Per chunk, index 0 is chunk 1.
    pub roles: Vec<ChunkRole>,
}

impl MaskPlan {
    /// Nothing masked.
    pub fn visible(stream: &TokenStream) -> Self {
        Self {
            labeled: true,
            target_chunk: None,
            target_ratio: None,
            masked: vec![false; stream.len()],
            roles: vec![ChunkRole::Context; stream.num_chunks()],
        }
    }

    /// Every motion slot masked and excluded from the token loss.
    pub fn fully_masked(stream: &TokenStream) -> Self {
        Self {
            labeled: false,
            target_chunk: None,
            target_ratio: None,
            masked: stream.tags.iter().map(|t| t.is_motion_slot()).collect(),
            roles: vec![ChunkRole::Target; stream.num_chunks()],
        }
    }

    /// Only the slots of chunk `index` masked; earlier chunks are context.
    pub fn generate_chunk(stream: &TokenStream, index: usize) -> Self {
        let masked = stream.tags.iter().map(|t| t.is_motion_slot() && t.chunk == Some(index)).collect();
        let roles = (1..=stream.num_chunks())
            .map(|c| if c < index { ChunkRole::Context } else if c == index { ChunkRole::Target } else { ChunkRole::Suffix })
            .collect();
        Self { labeled: true, target_chunk: Some(index), target_ratio: Some(1.0), masked, roles }
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }
}

/// A stream is labeled when none of its motion slots is a placeholder.
pub fn stream_is_labeled(stream: &TokenStream) -> bool {
    !stream.tags.iter().any(|t| t.modality == Modality::Mask)
}

pub fn sample_hybrid_mask(stream: &TokenStream, rng: &mut Rng) -> Result<MaskPlan> {
    let n_chunks = stream.num_chunks();
    if n_chunks == 0 {
        return Err(Error::InvalidArgument("hybrid masking needs at least one chunk".into()));
    }
    if !stream_is_labeled(stream) {
        return Ok(MaskPlan::fully_masked(stream));
    }
    let target = 1 + rng.below(n_chunks);
    let ratio = TARGET_RATIO_GRID[rng.below(TARGET_RATIO_GRID.len())];
    let target_slots: Vec<usize> = stream
        .tags
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_motion_slot() && t.chunk == Some(target))
        .map(|(p, _)| p)
        .collect();
    let mut masked = vec![false; stream.len()];
    if !target_slots.is_empty() {
        loop {
            let mut any = false;
            for &p in &target_slots {
                masked[p] = rng.bernoulli(ratio);
                any |= masked[p];
            }
            if any {
                break;
            }
        }
    }
    for (p, t) in stream.tags.iter().enumerate() {
        if t.is_motion_slot() && t.chunk.is_some_and(|c| c > target) {
            masked[p] = rng.bernoulli(SUFFIX_MASK_RATE);
        }
    }
    let roles = (1..=n_chunks)
        .map(|c| if c < target { ChunkRole::Context } else if c == target { ChunkRole::Target } else { ChunkRole::Suffix })
        .collect();
    Ok(MaskPlan { labeled: true, target_chunk: Some(target), target_ratio: Some(ratio), masked, roles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::seeded_rng;
    use crate::motion::{format_stream, ChunkLayout, HandSide, TokenChunk, Vocab};

    const V: Vocab = Vocab { instruction_ids: 4, codes_per_part: 8 };

    fn stream(n: usize) -> TokenStream {
        let chunks = (0..n)
            .map(|i| TokenChunk { wrist_ids: vec![i as u32; 3], finger_ids: vec![1; 2], hand_side: HandSide::Right })
            .collect();
        format_stream(V, &[0, 1], &[Vocab::VIS, Vocab::VIS], &ChunkLayout::Single(chunks)).unwrap()
    }

    #[test]
    fn two_chunk_structure() {
        let s = stream(2);
        let a = attention_allowed(&s).unwrap();
        let spans = s.chunk_spans().unwrap();
        let p2 = spans[1].open + 1;
        for k in 0..s.len() {
            assert!(a[p2][k], "chunk 2 sees everything up to itself");
        }
        let p1 = spans[0].open + 1;
        for k in spans[1].open..=spans[1].close {
            assert!(!a[p1][k]);
        }
        for k in spans[0].open..=spans[1].close {
            assert!(!a[0][k], "prefix never sees chunks");
        }
    }

    #[test]
    fn single_chunk_is_dense() {
        let s = stream(1);
        let a = attention_allowed(&s).unwrap();
        let first = s.prefix_len();
        for q in first..s.len() {
            assert!(a[q].iter().all(|&x| x));
        }
    }

    #[test]
    fn untagged_positions_rejected() {
        let mut s = stream(1);
        let p = s.prefix_len() + 1;
        s.tags[p].chunk = None;
        assert!(matches!(build_attention_mask(&s), Err(Error::Untagged(q)) if q == p));
        s.tags.pop();
        assert!(matches!(build_attention_mask(&s), Err(Error::Untagged(_))));
    }

    #[test]
    fn single_chunk_plan_targets_it() {
        let s = stream(1);
        let mut rng = seeded_rng(1);
        for _ in 0..20 {
            let plan = sample_hybrid_mask(&s, &mut rng).unwrap();
            assert_eq!(plan.target_chunk, Some(1));
            assert_eq!(plan.roles, vec![ChunkRole::Target]);
            assert!(plan.masked_count() >= 1);
        }
    }

    #[test]
    fn unlabeled_plan_masks_everything() {
        let mut s = TokenStream { vocab: V, ids: vec![], tags: vec![] };
        s = format_stream(s.vocab, &[0], &[Vocab::VIS], &ChunkLayout::Single(vec![])).unwrap();
        s.push_masked_chunk(3, 2, HandSide::Left);
        s.push_masked_chunk(3, 2, HandSide::Left);
        let plan = sample_hybrid_mask(&s, &mut seeded_rng(0)).unwrap();
        assert!(!plan.labeled);
        assert_eq!(plan.target_chunk, None);
        assert_eq!(plan.masked_count(), 10);
    }

    #[test]
    fn context_chunks_untouched() {
        let s = stream(4);
        let mut rng = seeded_rng(3);
        for _ in 0..200 {
            let plan = sample_hybrid_mask(&s, &mut rng).unwrap();
            let t = plan.target_chunk.unwrap();
            for (p, tag) in s.tags.iter().enumerate() {
                if tag.chunk.is_some_and(|c| c < t) {
                    assert!(!plan.masked[p]);
                }
                if !tag.is_motion_slot() {
                    assert!(!plan.masked[p]);
                }
            }
        }
    }
}
