//! Byte-level BPE vocabulary, mono-word vocabulary, and unit segmentation.

mod bpe;
mod mono;
mod segment;

pub use bpe::{learn_bpe, Vocabulary};
pub use mono::{build_mono_vocab, parse_word_list, MonoVocabulary, MonoWord};
pub use segment::{segment_forward_max_match, segment_tokens, SegmentUnit, Segmentation};

use thiserror::Error;

pub type TokenId = u32;

/// Byte 0x00 never merges with anything and is reserved to terminate
/// generation and separate documents. Chunking isolates it, so token id 0
/// is always exactly this byte.
pub const EOT_TOKEN: TokenId = 0;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("token id {0} out of range (vocab size {1})")]
    TokenOutOfRange(TokenId, usize),
    #[error("corpus ran out of adjacent pairs after {0} merges (requested {1})")]
    NotEnoughPairs(usize, usize),
    #[error("no target-language words survived filtering")]
    EmptyMonoVocab,
    #[error("invalid vocabulary data: {0}")]
    InvalidVocabulary(String),
    #[error("invalid mono vocabulary data: {0}")]
    InvalidMonoVocabulary(String),
}
