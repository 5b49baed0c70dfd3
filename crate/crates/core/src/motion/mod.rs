//! Hand motion representation: poses, chunking, residual quantization,
//! the chunk tokenizer and the unified token stream.

pub mod grvq;
pub mod pose;
pub mod stream;
pub mod tokenizer;

pub use grvq::{grvq_quantize, Codebook, CodebookPart, Quantized};
pub use pose::{chunk_sequence, HandSide, MotionChunk, PoseFrame, WRIST_FEATURES};
pub use stream::{format_stream, ChunkLayout, ChunkSpan, Modality, MotionPart, PosTag, TokenChunk, TokenStream, Vocab};
pub use tokenizer::{train_tokenizer, Tokenizer, TokenizerConfig, TokenizerReport};
