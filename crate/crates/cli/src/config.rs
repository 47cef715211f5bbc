//! Run configuration: one section per pipeline stage, every default
//! embedded here, TOML on disk. `print-config` dumps the effective values
//! so a run can always be reproduced from its printed config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mumo_core::head::HeadInit;
use mumo_core::model::{ModelConfig, TrainHyper};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub synth: SynthSection,
    pub tokenizer: TokenizerSection,
    pub train: TrainSection,
    pub mono: MonoSection,
    pub head: HeadSection,
    pub finetune: FinetuneSection,
    pub expand: ExpandSection,
    pub decode: DecodeSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub seed: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { d_model: 128, n_layers: 4, n_heads: 4, context_len: 192, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// distinct target-language words in the inventory
    pub inventory: usize,
    /// distinct syllables the words draw from
    pub syllables: usize,
    pub word_min_codepoints: usize,
    pub word_max_codepoints: usize,
    /// distinct ASCII filler words
    pub filler_words: usize,
    /// probability that a sentence position is filler rather than a word
    pub filler_ratio: f64,
    /// probability that a word follows one of its two preferred successors
    /// instead of being drawn uniformly
    pub follow_ratio: f64,
    pub sentence_min_words: usize,
    pub sentence_max_words: usize,
    pub sentences_per_paragraph: usize,
    pub train_bytes: usize,
    pub heldout_bytes: usize,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            inventory: 128,
            syllables: 96,
            word_min_codepoints: 3,
            word_max_codepoints: 4,
            filler_words: 24,
            filler_ratio: 0.15,
            follow_ratio: 0.85,
            sentence_min_words: 4,
            sentence_max_words: 9,
            sentences_per_paragraph: 8,
            train_bytes: 400_000,
            heldout_bytes: 64_000,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub merges: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        // Low enough that frequent target-language words stay fragmented
        // into several ids instead of being swallowed by merges.
        Self { merges: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f32,
    pub steps: usize,
    pub batch: usize,
    pub warmup_ratio: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { lr: 1e-3, steps: 900, batch: 4, warmup_ratio: 0.04, weight_decay: 0.01, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonoSection {
    /// inclusive codepoint ranges a word must lie inside; the default is
    /// the Hangul syllables block the synthetic language lives in
    pub unicode_ranges: Vec<(u32, u32)>,
}

impl Default for MonoSection {
    fn default() -> Self {
        Self { unicode_ranges: vec![(0xac00, 0xd7a3)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSection {
    pub init: HeadInit,
    pub seed: u64,
}

impl Default for HeadSection {
    fn default() -> Self {
        Self { init: HeadInit::Multi, seed: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub lr: f32,
    pub steps: usize,
    pub batch: usize,
    pub warmup_ratio: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { lr: 1e-3, steps: 1500, batch: 4, warmup_ratio: 0.04, weight_decay: 0.01, seed: 3 }
    }
}

/// Budget for the vocabulary-expansion contrast run, the one stage that
/// retrains every parameter; it only runs when `[bench] modes` lists
/// expand_vocab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpandSection {
    pub lr: f32,
    pub steps: usize,
    pub batch: usize,
    pub warmup_ratio: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for ExpandSection {
    fn default() -> Self {
        Self { lr: 1e-3, steps: 300, batch: 4, warmup_ratio: 0.04, weight_decay: 0.01, seed: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub k: usize,
    pub sample_top_k: usize,
    pub temperature: f32,
    pub top_p: f32,
    pub repetition_penalty: f32,
    pub max_new_tokens: usize,
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = mumo_core::decoder::DecodeConfig::default();
        Self {
            k: d.k,
            sample_top_k: d.sample_top_k,
            temperature: d.temperature,
            top_p: d.top_p,
            repetition_penalty: d.repetition_penalty,
            max_new_tokens: d.max_new_tokens,
            deterministic: true,
            seed: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub prompts: usize,
    pub prompt_chars: usize,
    pub reference_chars: usize,
    pub new_tokens: usize,
    /// run order of the report rows; vanilla is added up front if missing
    /// because every speedup is measured against it
    pub modes: Vec<String>,
    /// optional allow-list for the shortlist mode; absent means the full
    /// vocabulary, which must reproduce vanilla exactly
    pub shortlist_file: Option<String>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            prompts: 56,
            prompt_chars: 48,
            reference_chars: 160,
            new_tokens: 128,
            modes: vec![
                "vanilla".into(),
                "mumo".into(),
                "mumo_no_verify".into(),
                "shortlist".into(),
                "expand_vocab".into(),
            ],
            shortlist_file: None,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// One master seed fans out to distinct per-stage seeds so stages never
    /// accidentally share an RNG stream.
    pub fn override_seed(&mut self, seed: u64) {
        self.model.seed = seed as u32;
        self.synth.seed = seed.wrapping_add(1);
        self.train.seed = seed.wrapping_add(2);
        self.head.seed = seed.wrapping_add(3);
        self.finetune.seed = seed.wrapping_add(4);
        self.expand.seed = seed.wrapping_add(5);
        self.decode.seed = seed.wrapping_add(6);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.model.d_model,
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            context_len: self.model.context_len,
            vocab_size: 256 + self.tokenizer.merges,
            seed: self.model.seed,
        }
    }

    pub fn train_hyper(&self) -> TrainHyper {
        let t = &self.train;
        TrainHyper {
            lr: t.lr,
            steps: t.steps,
            batch: t.batch,
            warmup: warmup_steps(t.steps, t.warmup_ratio),
            weight_decay: t.weight_decay,
            seed: t.seed,
        }
    }

    pub fn finetune_hyper(&self) -> TrainHyper {
        let f = &self.finetune;
        TrainHyper {
            lr: f.lr,
            steps: f.steps,
            batch: f.batch,
            warmup: warmup_steps(f.steps, f.warmup_ratio),
            weight_decay: f.weight_decay,
            seed: f.seed,
        }
    }

    pub fn expand_hyper(&self) -> TrainHyper {
        let x = &self.expand;
        TrainHyper {
            lr: x.lr,
            steps: x.steps,
            batch: x.batch,
            warmup: warmup_steps(x.steps, x.warmup_ratio),
            weight_decay: x.weight_decay,
            seed: x.seed,
        }
    }

    pub fn decode_config(&self, mode: mumo_core::decoder::DecodeMode) -> mumo_core::decoder::DecodeConfig {
        let d = &self.decode;
        mumo_core::decoder::DecodeConfig {
            mode,
            k: d.k,
            sample_top_k: d.sample_top_k,
            temperature: d.temperature,
            top_p: d.top_p,
            repetition_penalty: d.repetition_penalty,
            max_new_tokens: d.max_new_tokens,
            deterministic: d.deterministic,
            seed: d.seed,
            ..Default::default()
        }
    }
}

pub fn warmup_steps(steps: usize, ratio: f32) -> usize {
    (steps as f32 * ratio).round() as usize
}
