//! Mono-word vocabulary: target-language words with frozen token expansions.

use std::collections::HashSet;

use super::{TokenId, TokenizerError, Vocabulary};

/// Expansions longer than this are rejected; such words are rare enough
/// that matching and verification gain nothing from carrying them.
pub const MAX_EXPANSION: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct MonoWord {
    pub surface: String,
    /// encode(surface) at build time; at least 2 ids, at most MAX_EXPANSION.
    pub expansion: Vec<TokenId>,
}

#[derive(Debug, Clone, Default)]
pub struct MonoVocabulary {
    words: Vec<MonoWord>,
    ranges: Vec<(u32, u32)>,
}

impl MonoVocabulary {
    /// No words at all. Decoding with this degenerates to the base model;
    /// the builder never produces it, but the decoder accepts it.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(words: Vec<MonoWord>, ranges: Vec<(u32, u32)>) -> Result<Self, TokenizerError> {
        let mut seen = HashSet::new();
        for w in &words {
            if w.expansion.len() < 2 {
                return Err(TokenizerError::InvalidMonoVocabulary(format!(
                    "word {:?} has expansion length {}",
                    w.surface,
                    w.expansion.len()
                )));
            }
            if w.expansion.len() > MAX_EXPANSION {
                return Err(TokenizerError::InvalidMonoVocabulary(format!(
                    "word {:?} has expansion length {} (cap {MAX_EXPANSION})",
                    w.surface,
                    w.expansion.len()
                )));
            }
            if !seen.insert(w.surface.clone()) {
                return Err(TokenizerError::InvalidMonoVocabulary(format!(
                    "duplicate surface {:?}",
                    w.surface
                )));
            }
            if !w.surface.chars().all(|c| in_ranges(c, &ranges)) {
                return Err(TokenizerError::InvalidMonoVocabulary(format!(
                    "word {:?} falls outside the configured codepoint ranges",
                    w.surface
                )));
            }
        }
        Ok(Self { words, ranges })
    }

    pub fn words(&self) -> &[MonoWord] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.ranges
    }

    /// Checks that every stored expansion still round-trips through the
    /// given vocabulary. Run after loading from disk.
    pub fn validate_against(&self, vocab: &Vocabulary) -> Result<(), TokenizerError> {
        for w in &self.words {
            let decoded = vocab.decode(&w.expansion).map_err(|e| {
                TokenizerError::InvalidMonoVocabulary(format!("word {:?}: {e}", w.surface))
            })?;
            if decoded != w.surface.as_bytes() {
                return Err(TokenizerError::InvalidMonoVocabulary(format!(
                    "expansion of {:?} decodes to {:?}",
                    w.surface,
                    String::from_utf8_lossy(&decoded)
                )));
            }
        }
        Ok(())
    }
}

fn in_ranges(c: char, ranges: &[(u32, u32)]) -> bool {
    let cp = c as u32;
    ranges.iter().any(|&(lo, hi)| cp >= lo && cp <= hi)
}

/// Filters a word list down to the words worth a joint-vocabulary slot:
/// all codepoints inside `ranges`, not already a single vocabulary entry,
/// and an expansion of 2..=16 tokens. Duplicates keep their first position.
/// Words over the expansion cap are dropped with a warning.
pub fn build_mono_vocab(
    words: &[String],
    vocab: &Vocabulary,
    ranges: &[(u32, u32)],
) -> Result<MonoVocabulary, TokenizerError> {
    let mut out: Vec<MonoWord> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for word in words {
        if word.is_empty() || !seen.insert(word) {
            continue;
        }
        if !word.chars().all(|c| in_ranges(c, ranges)) {
            continue;
        }
        let expansion = vocab.encode(word.as_bytes());
        if expansion.len() < 2 {
            // already a single entry of the base vocabulary
            continue;
        }
        if expansion.len() > MAX_EXPANSION {
            log::warn!(
                "dropping word {:?}: expansion length {} exceeds cap {}",
                word,
                expansion.len(),
                MAX_EXPANSION
            );
            continue;
        }
        out.push(MonoWord { surface: word.clone(), expansion });
    }
    if out.is_empty() {
        return Err(TokenizerError::EmptyMonoVocab);
    }
    MonoVocabulary::new(out, ranges.to_vec())
}

/// One word per line; blank lines and lines starting with '#' are ignored.
/// Leading and trailing ASCII whitespace is trimmed.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::learn_bpe;

    const ASCII_LOWER: (u32, u32) = (0x61, 0x7a);

    #[test]
    fn filters_and_expands() {
        let vocab = Vocabulary::byte_base();
        let words = vec!["ab".to_string(), "Ab".to_string(), "xyz".to_string()];
        let mono = build_mono_vocab(&words, &vocab, &[ASCII_LOWER]).unwrap();
        assert_eq!(mono.len(), 2);
        assert_eq!(mono.words()[0].surface, "ab");
        assert_eq!(mono.words()[0].expansion, vec![97, 98]);
        assert_eq!(mono.words()[1].surface, "xyz");
    }

    #[test]
    fn single_entry_words_are_excluded() {
        // "ab" merges into one token, so only "abc" survives.
        let vocab = learn_bpe(b"abab", 1).unwrap();
        let words = vec!["ab".to_string(), "abc".to_string()];
        let mono = build_mono_vocab(&words, &vocab, &[ASCII_LOWER]).unwrap();
        assert_eq!(mono.len(), 1);
        assert_eq!(mono.words()[0].surface, "abc");
        assert_eq!(mono.words()[0].expansion, vec![256, 99]);
    }

    #[test]
    fn empty_result_is_an_error() {
        let vocab = Vocabulary::byte_base();
        let words = vec!["ABC".to_string()];
        assert!(matches!(
            build_mono_vocab(&words, &vocab, &[ASCII_LOWER]),
            Err(TokenizerError::EmptyMonoVocab)
        ));
    }

    #[test]
    fn duplicates_keep_first_position() {
        let vocab = Vocabulary::byte_base();
        let words = vec!["cd".into(), "ab".into(), "cd".into()];
        let mono = build_mono_vocab(&words, &vocab, &[ASCII_LOWER]).unwrap();
        assert_eq!(mono.len(), 2);
        assert_eq!(mono.words()[0].surface, "cd");
        assert_eq!(mono.words()[1].surface, "ab");
    }

    #[test]
    fn overlong_expansions_are_dropped() {
        let vocab = Vocabulary::byte_base();
        let words = vec!["a".repeat(17), "ok".into()];
        let mono = build_mono_vocab(&words, &vocab, &[ASCII_LOWER]).unwrap();
        assert_eq!(mono.len(), 1);
        assert_eq!(mono.words()[0].surface, "ok");
    }

    #[test]
    fn expansions_decode_to_surfaces() {
        let corpus = "abc bcd cde abc bcd abc ".repeat(4);
        let vocab = learn_bpe(corpus.as_bytes(), 3).unwrap();
        let words: Vec<String> = ["abc", "bcd", "cde"].iter().map(|s| s.to_string()).collect();
        let mono = build_mono_vocab(&words, &vocab, &[ASCII_LOWER]).unwrap();
        mono.validate_against(&vocab).unwrap();
        for w in mono.words() {
            assert!(w.expansion.len() >= 2);
            assert_eq!(vocab.decode(&w.expansion).unwrap(), w.surface.as_bytes());
        }
    }

    #[test]
    fn word_list_parsing_skips_comments() {
        let text = "# inventory\nab\n\n  cd  \n#ef\n";
        assert_eq!(parse_word_list(text), vec!["ab".to_string(), "cd".to_string()]);
    }
}
