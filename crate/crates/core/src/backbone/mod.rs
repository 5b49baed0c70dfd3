//! Transformer backbone over token streams: chunk-causal attention, hybrid
//! masking, the masked-chunk token loss and iterative decoding.

pub mod decode;
pub mod mask;
pub mod model;

pub use decode::{decode_chunk_with, majority_vote, DecodeConfig};
pub use mask::{attention_allowed, build_attention_mask, sample_hybrid_mask, ChunkRole, MaskPlan, SUFFIX_MASK_RATE, TARGET_RATIO_GRID};
pub use model::{chunk_rows, embeddings_by_chunk, mcp_loss, Backbone, BackboneConfig, ForwardOut, StreamInputs};
