//! Episodes converted into backbone inputs.

use crate::backend::Tensor;
use crate::error::{Error, Result};
use crate::motion::{chunk_sequence, format_stream, ChunkLayout, HandSide, MotionChunk, TokenChunk, TokenStream, Tokenizer, Vocab};
use crate::world::{boundary_frames, feature_tokens, EpisodeSample, Split, Splits, WorldConfig};

/// Id layout for a world / tokenizer pair.
pub fn vocab_for(world: &WorldConfig, tokenizer: &Tokenizer) -> Vocab {
    Vocab { instruction_ids: world.instruction_vocab() as u32, codes_per_part: tokenizer.config().entries as u32 }
}

/// Motion chunks the tokenizer is fitted on: lab training episodes plus the
/// labeled share of wild training episodes.
pub fn tokenizer_corpus(splits: &Splits, world: &WorldConfig) -> Result<Vec<MotionChunk>> {
    let mut out = Vec::new();
    for e in splits.lab_train.iter().chain(&splits.wild_train) {
        if let (true, Some(poses)) = (e.labeled, e.poses.as_ref()) {
            out.extend(chunk_sequence(poses, world.chunk_len, e.hand_side)?);
        }
    }
    Ok(out)
}

/// Everything the models need from one episode.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub seed: u64,
    pub split: Split,
    pub labeled: bool,
    pub hand: HandSide,
    pub instruction: Vec<u32>,
    /// Full-episode stream with state-latent slots; unlabeled episodes carry
    /// placeholder chunks.
    pub stream: TokenStream,
    /// Prefix followed by one placeholder chunk: the input for predicting the
    /// first chunk without any motion context.
    pub context: TokenStream,
    /// Feature tokens of the initial frame, one per `VIS` slot.
    pub visual: Vec<Vec<f64>>,
    pub first_frame: Vec<f64>,
    /// `(start, end)` observation pair of each chunk.
    pub boundaries: Vec<(Vec<f64>, Vec<f64>)>,
    /// Ground-truth motion, empty for unlabeled episodes.
    pub chunks: Vec<MotionChunk>,
    pub proprio0: Vec<f64>,
    pub actions: Option<Tensor>,
}

pub struct Layout {
    pub vocab: Vocab,
    pub wrist_slots: usize,
    pub finger_slots: usize,
    pub chunks: usize,
    pub chunk_len: usize,
    pub token_dim: usize,
    pub tokens_per_frame: usize,
}

impl Layout {
    pub fn new(world: &WorldConfig, tokenizer: &Tokenizer) -> Self {
        let tc = tokenizer.config();
        Self {
            vocab: vocab_for(world, tokenizer),
            wrist_slots: tc.wrist_tokens(),
            finger_slots: tc.finger_tokens(),
            chunks: world.chunks_per_episode,
            chunk_len: world.chunk_len,
            token_dim: world.feature_token_dim,
            tokens_per_frame: world.tokens_per_frame(),
        }
    }

    pub fn slots_per_chunk(&self) -> usize {
        self.wrist_slots + self.finger_slots
    }

    /// Prefix plus the given chunks, then one placeholder chunk per
    /// `placeholders`, with state-latent slots.
    pub fn stream(&self, instruction: &[u32], hand: HandSide, chunks: &[TokenChunk], placeholders: usize) -> Result<TokenStream> {
        let vis = vec![Vocab::VIS; self.tokens_per_frame];
        let mut s = format_stream(self.vocab, instruction, &vis, &ChunkLayout::Single(chunks.to_vec()))?;
        for _ in 0..placeholders {
            s.push_masked_chunk(self.wrist_slots, self.finger_slots, hand);
        }
        Ok(s.with_state_latents(self.slots_per_chunk()))
    }

    pub fn prepare(&self, ep: &EpisodeSample, tokenizer: &Tokenizer) -> Result<Prepared> {
        let n = self.chunks;
        let first = ep.observations.first().ok_or_else(|| Error::Empty("episode without frames".into()))?;
        let (stream, chunks) = match (&ep.poses, ep.labeled) {
            (Some(poses), true) => {
                let mut chunks = chunk_sequence(poses, self.chunk_len, ep.hand_side)?;
                chunks.truncate(n);
                let tokens = chunks.iter().map(|c| tokenizer.tokenize_chunk(c)).collect::<Result<Vec<_>>>()?;
                (self.stream(&ep.instruction, ep.hand_side, &tokens, 0)?, chunks)
            }
            _ => (self.stream(&ep.instruction, ep.hand_side, &[], n)?, Vec::new()),
        };
        let boundaries = (1..=n)
            .map(|i| boundary_frames(ep, i, self.chunk_len).map(|(a, b)| (a.to_vec(), b.to_vec())))
            .collect::<Result<Vec<_>>>()?;
        let actions = match &ep.actions {
            Some(rows) => Some(Tensor::stack_rows(rows)?),
            None => None,
        };
        Ok(Prepared {
            seed: ep.seed,
            split: ep.split,
            labeled: ep.labeled && ep.poses.is_some(),
            hand: ep.hand_side,
            instruction: ep.instruction.clone(),
            stream,
            context: self.stream(&ep.instruction, ep.hand_side, &[], 1)?,
            visual: feature_tokens(first, self.token_dim),
            first_frame: first.clone(),
            boundaries,
            chunks,
            proprio0: ep.proprio.first().cloned().unwrap_or_default(),
            actions,
        })
    }

    pub fn prepare_all(&self, eps: &[EpisodeSample], tokenizer: &Tokenizer) -> Result<Vec<Prepared>> {
        eps.iter().map(|e| self.prepare(e, tokenizer)).collect()
    }
}
