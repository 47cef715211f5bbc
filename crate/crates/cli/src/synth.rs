//! Synthetic target language: a small inventory of multi-syllable Hangul
//! words embedded in ASCII filler. Every inventory word is several UTF-8
//! bytes long, so a byte-level vocabulary necessarily fragments it, which
//! is the failure mode the word head exists to fix. Word order follows a
//! per-word successor table, giving the base model real structure to learn.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SynthSection;

const HANGUL_FIRST: u32 = 0xac00;
const HANGUL_COUNT: u32 = 11_172;

pub struct SynthOutput {
    pub train: String,
    pub heldout: String,
    /// the mono-word inventory, one entry per line of the word list
    pub words: Vec<String>,
}

/// Deterministic spread over the Hangul block: consecutive indices land on
/// unrelated syllables, so byte pairs differ across the alphabet.
fn syllable(i: usize) -> char {
    let cp = HANGUL_FIRST + (i as u32 * 467) % HANGUL_COUNT;
    char::from_u32(cp).expect("in the Hangul syllables block")
}

fn make_inventory(spec: &SynthSection, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words = Vec::with_capacity(spec.inventory);
    let mut seen = HashSet::new();
    while words.len() < spec.inventory {
        let len = rng.gen_range(spec.word_min_codepoints..=spec.word_max_codepoints);
        let w: String = (0..len).map(|_| syllable(rng.gen_range(0..spec.syllables))).collect();
        assert!(w.len() >= 4, "inventory word {w:?} is under 4 UTF-8 bytes");
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn make_fillers(spec: &SynthSection, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut fillers = Vec::with_capacity(spec.filler_words);
    let mut seen = HashSet::new();
    while fillers.len() < spec.filler_words {
        let len = rng.gen_range(2..=5);
        let w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        if seen.insert(w.clone()) {
            fillers.push(w);
        }
    }
    fillers
}

struct Language {
    words: Vec<String>,
    fillers: Vec<String>,
    /// two preferred successors per word; most transitions follow them,
    /// which keeps the next word predictable enough to be worth proposing
    successors: Vec<[usize; 2]>,
}

fn make_language(spec: &SynthSection, rng: &mut ChaCha8Rng) -> Language {
    let words = make_inventory(spec, rng);
    let fillers = make_fillers(spec, rng);
    let successors = (0..words.len())
        .map(|_| [rng.gen_range(0..words.len()), rng.gen_range(0..words.len())])
        .collect();
    Language { words, fillers, successors }
}

fn sentence(lang: &Language, spec: &SynthSection, rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(spec.sentence_min_words..=spec.sentence_max_words);
    let mut parts = Vec::with_capacity(len);
    let mut prev: Option<usize> = None;
    for _ in 0..len {
        if rng.gen_bool(spec.filler_ratio) {
            parts.push(lang.fillers[rng.gen_range(0..lang.fillers.len())].clone());
        } else {
            let w = match prev {
                Some(p) if rng.gen_bool(spec.follow_ratio) => {
                    lang.successors[p][rng.gen_range(0..2)]
                }
                _ => rng.gen_range(0..lang.words.len()),
            };
            parts.push(lang.words[w].clone());
            prev = Some(w);
        }
    }
    let mut s = parts.join(" ");
    s.push('.');
    s
}

/// Deterministic corpus split disjoint at sentence granularity: a sentence
/// that landed in the training text is never reused for heldout.
pub fn synth_corpus(spec: &SynthSection) -> SynthOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lang = make_language(spec, &mut rng);

    let mut train_sentences: HashSet<String> = HashSet::new();
    let emit = |target_bytes: usize,
                    exclude: Option<&HashSet<String>>,
                    collect: &mut Option<&mut HashSet<String>>,
                    rng: &mut ChaCha8Rng| {
        let mut out = String::new();
        while out.len() < target_bytes {
            let mut para = Vec::with_capacity(spec.sentences_per_paragraph);
            while para.len() < spec.sentences_per_paragraph {
                let s = sentence(&lang, spec, rng);
                if exclude.is_some_and(|set| set.contains(&s)) {
                    continue;
                }
                if let Some(set) = collect {
                    set.insert(s.clone());
                }
                para.push(s);
            }
            out.push_str(&para.join(" "));
            out.push('\n');
        }
        out
    };

    let train = emit(spec.train_bytes, None, &mut Some(&mut train_sentences), &mut rng);
    let heldout = emit(spec.heldout_bytes, Some(&train_sentences), &mut None, &mut rng);

    SynthOutput { train, heldout, words: lang.words }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSection {
        SynthSection {
            inventory: 24,
            syllables: 16,
            filler_words: 8,
            train_bytes: 8_000,
            heldout_bytes: 2_000,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_corpus(&small_spec());
        let b = synth_corpus(&small_spec());
        assert_eq!(a.train, b.train);
        assert_eq!(a.heldout, b.heldout);
        assert_eq!(a.words, b.words);
    }

    #[test]
    fn different_seed_different_corpus() {
        let a = synth_corpus(&small_spec());
        let b = synth_corpus(&SynthSection { seed: 99, ..small_spec() });
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn every_inventory_word_is_at_least_four_utf8_bytes() {
        let out = synth_corpus(&small_spec());
        assert_eq!(out.words.len(), 24);
        for w in &out.words {
            assert!(w.len() >= 4, "{w:?} is {} bytes", w.len());
        }
    }

    #[test]
    fn train_and_heldout_sentences_are_disjoint() {
        let out = synth_corpus(&small_spec());
        let sentences = |text: &str| -> HashSet<String> {
            text.lines()
                .flat_map(|l| l.split_inclusive('.'))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let train = sentences(&out.train);
        let heldout = sentences(&out.heldout);
        assert!(!heldout.is_empty());
        let overlap: Vec<_> = heldout.intersection(&train).collect();
        assert!(overlap.is_empty(), "shared sentences: {overlap:?}");
    }

    #[test]
    fn corpora_reach_their_requested_sizes() {
        let spec = small_spec();
        let out = synth_corpus(&spec);
        assert!(out.train.len() >= spec.train_bytes);
        assert!(out.heldout.len() >= spec.heldout_bytes);
        // paragraphs end in newline-terminated lines of sentences
        assert!(out.train.ends_with('\n'));
        assert!(out.train.lines().all(|l| l.ends_with('.')));
    }
}
