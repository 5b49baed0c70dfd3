//! Token chunks and the interleaved instruction / visual / motion stream.
//!
//! Layout: `[instruction][visual][state latents]` followed, for every chunk,
//! by `<mot> wrist ids.. finger ids.. </mot>`. Bimanual streams put the left
//! chunk before the right chunk of each time step.

use serde::{Deserialize, Serialize};

use super::pose::HandSide;
use crate::error::{Error, Result};

/// Quantized motion chunk. Ids are local codebook indices in `[0, entries)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenChunk {
    pub wrist_ids: Vec<u32>,
    pub finger_ids: Vec<u32>,
    pub hand_side: HandSide,
}

impl TokenChunk {
    pub fn len(&self) -> usize {
        self.wrist_ids.len() + self.finger_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Global id layout shared by the stream formatter and the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub instruction_ids: u32,
    pub codes_per_part: u32,
}

impl Vocab {
    pub const MASK: u32 = 0;
    pub const MOT: u32 = 1;
    pub const MOT_END: u32 = 2;
    pub const VIS: u32 = 3;
    pub const LSP: u32 = 4;
    const SPECIALS: u32 = 5;

    pub fn instruction_base(&self) -> u32 {
        Self::SPECIALS
    }

    pub fn wrist_base(&self) -> u32 {
        Self::SPECIALS + self.instruction_ids
    }

    pub fn finger_base(&self) -> u32 {
        self.wrist_base() + self.codes_per_part
    }

    pub fn size(&self) -> u32 {
        self.finger_base() + self.codes_per_part
    }

    pub fn instruction(&self, id: u32) -> Result<u32> {
        if id >= self.instruction_ids {
            return Err(Error::TokenOutOfRange { id, vocab: self.instruction_ids });
        }
        Ok(self.instruction_base() + id)
    }

    pub fn wrist(&self, code: u32) -> Result<u32> {
        if code >= self.codes_per_part {
            return Err(Error::TokenOutOfRange { id: code, vocab: self.codes_per_part });
        }
        Ok(self.wrist_base() + code)
    }

    pub fn finger(&self, code: u32) -> Result<u32> {
        if code >= self.codes_per_part {
            return Err(Error::TokenOutOfRange { id: code, vocab: self.codes_per_part });
        }
        Ok(self.finger_base() + code)
    }

    /// `(first, end)` global id range of the codes legal at a motion slot.
    pub fn part_range(&self, part: MotionPart) -> (u32, u32) {
        match part {
            MotionPart::Wrist => (self.wrist_base(), self.finger_base()),
            MotionPart::Finger => (self.finger_base(), self.size()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Instruction,
    Visual,
    Motion,
    Delimiter,
    /// Motion slot whose id is the `[MASK]` placeholder in the stream itself.
    Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionPart {
    Wrist,
    Finger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosTag {
    pub modality: Modality,
    /// 1-based chunk index for motion slots and their delimiters.
    pub chunk: Option<usize>,
    /// Slot index within the chunk (motion slots only).
    pub within: Option<usize>,
    pub part: Option<MotionPart>,
    pub hand: Option<HandSide>,
}

impl PosTag {
    fn plain(modality: Modality) -> Self {
        Self { modality, chunk: None, within: None, part: None, hand: None }
    }

    pub fn is_motion_slot(&self) -> bool {
        matches!(self.modality, Modality::Motion | Modality::Mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenStream {
    pub vocab: Vocab,
    pub ids: Vec<u32>,
    pub tags: Vec<PosTag>,
}

/// Chunks to lay out after the prefix.
#[derive(Clone, Debug)]
pub enum ChunkLayout {
    Single(Vec<TokenChunk>),
    Bimanual { left: Vec<TokenChunk>, right: Vec<TokenChunk> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkSpan {
    pub index: usize,
    /// Position of `<mot>`.
    pub open: usize,
    /// Position of `</mot>`.
    pub close: usize,
    pub hand: HandSide,
}

impl ChunkSpan {
    /// Positions of the motion slots.
    pub fn slots(&self) -> std::ops::Range<usize> {
        self.open + 1..self.close
    }
}

pub fn format_stream(
    vocab: Vocab,
    instruction: &[u32],
    visual: &[u32],
    layout: &ChunkLayout,
) -> Result<TokenStream> {
    let mut s = TokenStream { vocab, ids: Vec::new(), tags: Vec::new() };
    for &i in instruction {
        s.ids.push(vocab.instruction(i)?);
        s.tags.push(PosTag::plain(Modality::Instruction));
    }
    for &v in visual {
        s.ids.push(v);
        s.tags.push(PosTag::plain(Modality::Visual));
    }
    let ordered: Vec<&TokenChunk> = match layout {
        ChunkLayout::Single(chunks) => chunks.iter().collect(),
        ChunkLayout::Bimanual { left, right } => {
            if left.len() != right.len() {
                return Err(Error::InvalidArgument(format!(
                    "bimanual layout with {} left and {} right chunks",
                    left.len(),
                    right.len()
                )));
            }
            left.iter().zip(right).flat_map(|(l, r)| [l, r]).collect()
        }
    };
    for (n, chunk) in ordered.into_iter().enumerate() {
        s.push_chunk(n + 1, chunk, false)?;
    }
    Ok(s)
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn push_chunk(&mut self, index: usize, chunk: &TokenChunk, placeholder: bool) -> Result<()> {
        let hand = Some(chunk.hand_side);
        let delim = PosTag { modality: Modality::Delimiter, chunk: Some(index), within: None, part: None, hand };
        self.ids.push(Vocab::MOT);
        self.tags.push(delim);
        let slots = chunk
            .wrist_ids
            .iter()
            .map(|&c| (MotionPart::Wrist, c))
            .chain(chunk.finger_ids.iter().map(|&c| (MotionPart::Finger, c)));
        for (k, (part, code)) in slots.enumerate() {
            let (id, modality) = if placeholder {
                (Vocab::MASK, Modality::Mask)
            } else {
                let id = match part {
                    MotionPart::Wrist => self.vocab.wrist(code)?,
                    MotionPart::Finger => self.vocab.finger(code)?,
                };
                (id, Modality::Motion)
            };
            self.ids.push(id);
            self.tags.push(PosTag { modality, chunk: Some(index), within: Some(k), part: Some(part), hand });
        }
        self.ids.push(Vocab::MOT_END);
        self.tags.push(delim);
        Ok(())
    }

    /// Appends a chunk whose slots all hold `[MASK]` (a chunk to be generated).
    pub fn push_masked_chunk(&mut self, wrist_slots: usize, finger_slots: usize, hand: HandSide) {
        let index = self.num_chunks() + 1;
        let placeholder = TokenChunk { wrist_ids: vec![0; wrist_slots], finger_ids: vec![0; finger_slots], hand_side: hand };
        self.push_chunk(index, &placeholder, true).expect("placeholder ids are always valid");
    }

    /// Inserts `count` state-latent placeholders right after the visual prefix.
    pub fn with_state_latents(mut self, count: usize) -> Self {
        let at = self
            .tags
            .iter()
            .position(|t| !matches!(t.modality, Modality::Instruction | Modality::Visual))
            .unwrap_or(self.ids.len());
        let ids = std::iter::repeat_n(Vocab::LSP, count);
        let tags = std::iter::repeat_n(PosTag::plain(Modality::Visual), count);
        self.ids.splice(at..at, ids);
        self.tags.splice(at..at, tags);
        self
    }

    /// Number of positions before the first chunk.
    pub fn prefix_len(&self) -> usize {
        self.tags.iter().position(|t| t.chunk.is_some()).unwrap_or(self.tags.len())
    }

    pub fn num_chunks(&self) -> usize {
        self.tags.iter().filter_map(|t| t.chunk).max().unwrap_or(0)
    }

    /// Recovers chunk boundaries from the tags.
    pub fn chunk_spans(&self) -> Result<Vec<ChunkSpan>> {
        if self.tags.len() != self.ids.len() {
            return Err(Error::Untagged(self.tags.len().min(self.ids.len())));
        }
        let mut spans: Vec<ChunkSpan> = Vec::new();
        let mut open: Option<(usize, usize, HandSide)> = None;
        for (p, (tag, &id)) in self.tags.iter().zip(&self.ids).enumerate() {
            if tag.modality != Modality::Delimiter {
                continue;
            }
            let idx = tag.chunk.ok_or(Error::Untagged(p))?;
            let hand = tag.hand.ok_or(Error::Untagged(p))?;
            match (id, open) {
                (Vocab::MOT, None) => open = Some((p, idx, hand)),
                (Vocab::MOT_END, Some((o, i, h))) if i == idx => {
                    spans.push(ChunkSpan { index: idx, open: o, close: p, hand: h });
                    open = None;
                }
                _ => return Err(Error::InvalidArgument(format!("unbalanced delimiter at {p}"))),
            }
        }
        if open.is_some() {
            return Err(Error::InvalidArgument("unterminated chunk".into()));
        }
        Ok(spans)
    }

    /// Positions of every motion slot, in stream order.
    pub fn motion_positions(&self) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_motion_slot())
            .map(|(p, _)| p)
            .collect()
    }

    /// Local code ids of chunk `index` (1-based) as a [`TokenChunk`].
    pub fn chunk_tokens(&self, index: usize) -> Result<TokenChunk> {
        let span = self
            .chunk_spans()?
            .into_iter()
            .find(|s| s.index == index)
            .ok_or_else(|| Error::InvalidArgument(format!("no chunk {index}")))?;
        let mut out = TokenChunk { wrist_ids: Vec::new(), finger_ids: Vec::new(), hand_side: span.hand };
        for p in span.slots() {
            let id = self.ids[p];
            match self.tags[p].part {
                Some(MotionPart::Wrist) => out.wrist_ids.push(id - self.vocab.wrist_base()),
                Some(MotionPart::Finger) => out.finger_ids.push(id - self.vocab.finger_base()),
                None => return Err(Error::Untagged(p)),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const V: Vocab = Vocab { instruction_ids: 6, codes_per_part: 16 };

    fn chunk(w: &[u32], f: &[u32], hand: HandSide) -> TokenChunk {
        TokenChunk { wrist_ids: w.to_vec(), finger_ids: f.to_vec(), hand_side: hand }
    }

    #[test]
    fn single_right_chunk_layout() {
        let s = format_stream(
            V,
            &[0, 4],
            &[Vocab::VIS, Vocab::VIS],
            &ChunkLayout::Single(vec![chunk(&[1, 2], &[3, 4], HandSide::Right)]),
        )
        .unwrap();
        let w = V.wrist_base();
        let f = V.finger_base();
        assert_eq!(
            s.ids,
            vec![5, 9, Vocab::VIS, Vocab::VIS, Vocab::MOT, w + 1, w + 2, f + 3, f + 4, Vocab::MOT_END]
        );
        assert_eq!(s.prefix_len(), 4);
        assert_eq!(s.tags[5].within, Some(0));
        assert_eq!(s.tags[8].part, Some(MotionPart::Finger));
    }

    #[test]
    fn no_chunks_is_prefix_only() {
        let s = format_stream(V, &[1], &[Vocab::VIS], &ChunkLayout::Single(vec![])).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.chunk_spans().unwrap().is_empty());
    }

    #[test]
    fn bimanual_interleaves_left_then_right() {
        let l = |c| chunk(&[c], &[c], HandSide::Left);
        let r = |c| chunk(&[c], &[c], HandSide::Right);
        let s = format_stream(
            V,
            &[],
            &[],
            &ChunkLayout::Bimanual { left: vec![l(1), l(2)], right: vec![r(3), r(4)] },
        )
        .unwrap();
        let spans = s.chunk_spans().unwrap();
        let hands: Vec<_> = spans.iter().map(|s| s.hand).collect();
        assert_eq!(hands, vec![HandSide::Left, HandSide::Right, HandSide::Left, HandSide::Right]);
        assert_eq!(s.chunk_tokens(3).unwrap().wrist_ids, vec![2]);
        assert_eq!(s.chunk_tokens(2).unwrap().wrist_ids, vec![3]);
    }

    #[test]
    fn bimanual_count_mismatch_rejected() {
        let layout = ChunkLayout::Bimanual { left: vec![chunk(&[1], &[1], HandSide::Left)], right: vec![] };
        assert!(format_stream(V, &[], &[], &layout).is_err());
    }

    #[test]
    fn out_of_range_code_rejected() {
        let layout = ChunkLayout::Single(vec![chunk(&[16], &[0], HandSide::Right)]);
        assert!(format_stream(V, &[], &[], &layout).is_err());
    }

    #[test]
    fn state_latents_go_after_visual_prefix() {
        let s = format_stream(V, &[0], &[Vocab::VIS], &ChunkLayout::Single(vec![chunk(&[1], &[2], HandSide::Right)]))
            .unwrap()
            .with_state_latents(3);
        assert_eq!(&s.ids[..5], &[5, Vocab::VIS, Vocab::LSP, Vocab::LSP, Vocab::LSP]);
        assert_eq!(s.prefix_len(), 5);
        assert_eq!(s.chunk_spans().unwrap()[0].open, 5);
    }
}
