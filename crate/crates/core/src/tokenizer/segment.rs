//! Forward maximum matching of mono words over base-token sequences.

use std::collections::HashMap;

use super::{MonoVocabulary, TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentUnit {
    /// Index into the mono vocabulary.
    Word(u32),
    /// A single base token.
    Token(TokenId),
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub tokens: Vec<TokenId>,
    pub units: Vec<SegmentUnit>,
    /// Index into `tokens` where each unit begins.
    pub starts: Vec<usize>,
}

impl Segmentation {
    pub fn unit_len(&self, i: usize, mono: &MonoVocabulary) -> usize {
        match self.units[i] {
            SegmentUnit::Word(w) => mono.words()[w as usize].expansion.len(),
            SegmentUnit::Token(_) => 1,
        }
    }

    pub fn unit_surface(&self, i: usize, mono: &MonoVocabulary, vocab: &Vocabulary) -> Vec<u8> {
        match self.units[i] {
            SegmentUnit::Word(w) => mono.words()[w as usize].surface.as_bytes().to_vec(),
            SegmentUnit::Token(id) => vocab.entry(id).expect("token from own vocab").to_vec(),
        }
    }
}

/// Encodes the text and segments the resulting token sequence.
pub fn segment_forward_max_match(
    text: &[u8],
    mono: &MonoVocabulary,
    vocab: &Vocabulary,
) -> Segmentation {
    segment_tokens(vocab.encode(text), mono)
}

/// Strict left-to-right, non-overlapping segmentation. At each position the
/// longest mono-word expansion matching the upcoming tokens wins; otherwise
/// one base token is emitted. Matching is exact on token ids, so a word is
/// only found where its expansion lands on token boundaries.
pub fn segment_tokens(tokens: Vec<TokenId>, mono: &MonoVocabulary) -> Segmentation {
    let mut by_expansion: HashMap<&[TokenId], u32> = HashMap::new();
    let mut max_len = 0;
    for (w, word) in mono.words().iter().enumerate() {
        by_expansion.insert(&word.expansion, w as u32);
        max_len = max_len.max(word.expansion.len());
    }

    let mut units = Vec::new();
    let mut starts = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let cap = max_len.min(tokens.len() - i);
        let mut matched = None;
        for l in (2..=cap).rev() {
            if let Some(&w) = by_expansion.get(&tokens[i..i + l]) {
                matched = Some((w, l));
                break;
            }
        }
        starts.push(i);
        match matched {
            Some((w, l)) => {
                units.push(SegmentUnit::Word(w));
                i += l;
            }
            None => {
                units.push(SegmentUnit::Token(tokens[i]));
                i += 1;
            }
        }
    }
    Segmentation { tokens, units, starts }
}
