//! Decoding loops: plain sampling, lexical shortlisting, and the two-step
//! word decoder. The two-step loop proposes top-k candidates from the joint
//! vocabulary, has the base model verify each candidate's token expansion in
//! one batched pass, then commits the winner's expansion so the next step
//! continues from ordinary base tokens.
//!
//! Every forward invocation and every processed token position is counted in
//! the trace; speed claims are ratios of those counters, never of wall time
//! alone.

use std::collections::HashSet;
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::head::{mono_forward, word_joint_id, MonoHead};
use crate::math::log_softmax_at;
use crate::model::{
    forward_incremental, train_base, verify_logprobs, BaseModel, DecodeState, ModelError,
    TrainHyper, TrainLog,
};
use crate::tokenizer::{
    segment_tokens, MonoVocabulary, SegmentUnit, TokenId, TokenizerError, EOT_TOKEN,
};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("prompt produced no tokens")]
    EmptyPrompt,
    #[error("prompt of {0} tokens leaves no room in context {1}")]
    PromptTooLong(usize, usize),
    #[error("no feasible candidate at step {0}: every candidate overflows the context")]
    NoFeasibleCandidate(usize),
    #[error("decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// two-step: propose joint candidates, verify with the base model,
    /// commit the winner's expansion
    Mumo,
    /// one-step ablation: commit the best candidate by prior alone
    MumoNoVerify,
    /// plain sampling over base tokens
    Vanilla,
    /// plain sampling restricted to an allowed base-token set
    Shortlist,
}

/// Knobs for one generation run. `k` sizes the verified candidate set;
/// `sample_top_k` sizes plain top-k sampling. The two defaults differ on
/// purpose: verification works best on a tight candidate set, while plain
/// sampling keeps a wider one.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub k: usize,
    pub sample_top_k: usize,
    pub temperature: f32,
    pub top_p: f32,
    pub repetition_penalty: f32,
    pub max_new_tokens: usize,
    /// argmax instead of sampling
    pub deterministic: bool,
    pub seed: u64,
    /// allowed base ids for shortlist mode
    pub shortlist: Option<HashSet<TokenId>>,
    /// reserved id that terminates generation when committed
    pub eot: Option<TokenId>,
    /// parsed and carried for config compatibility; the loop does not apply
    /// a length penalty
    pub exp_decay_length_penalty: Option<(usize, f32)>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Vanilla,
            k: 10,
            sample_top_k: 20,
            temperature: 0.1,
            top_p: 0.7,
            repetition_penalty: 1.05,
            max_new_tokens: 128,
            deterministic: false,
            seed: 0,
            shortlist: None,
            eot: Some(EOT_TOKEN),
            exp_decay_length_penalty: Some((256, 1.03)),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |msg: String| Err(DecodeError::InvalidConfig(msg));
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.sample_top_k < 1 {
            return bad("sample_top_k must be >= 1".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if !(self.repetition_penalty > 0.0) {
            return bad(format!("repetition_penalty {} must be > 0", self.repetition_penalty));
        }
        if self.max_new_tokens < 1 {
            return bad("max_new_tokens must be >= 1".into());
        }
        if self.mode == DecodeMode::Shortlist {
            match &self.shortlist {
                None => return bad("shortlist mode needs an allowed id set".into()),
                Some(s) if s.is_empty() => return bad("shortlist set is empty".into()),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// One proposal: a joint-vocabulary unit with its base-token expansion.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub joint_id: u32,
    pub surface: Vec<u8>,
    /// base ids this unit commits; single id for base tokens
    pub expansion: Vec<TokenId>,
    /// log probability under the (penalized, tempered) joint distribution
    pub prior: f32,
    /// mean base-model log probability of the expansion, once verified
    pub feasibility: Option<f32>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CandidateRecord {
    pub joint_id: u32,
    pub surface: String,
    pub prior: f32,
    pub feasibility: Option<f32>,
    /// true when the candidate could not be verified or committed within
    /// the context window
    pub dropped: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub candidates: Vec<CandidateRecord>,
    pub chosen: u32,
    pub committed: Vec<TokenId>,
}

/// Counters for one generation run. `invocations` counts forward passes of
/// the base model (prompt ingestion, commits, and batched verifications);
/// `positions` counts every token position those passes processed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DecodeTrace {
    pub steps: Vec<StepRecord>,
    pub tokens_emitted: usize,
    pub invocations: usize,
    pub positions: usize,
    pub prompt_tokens: usize,
    pub wall_secs: f64,
    /// the context filled up before max_new_tokens
    pub truncated: bool,
}

impl DecodeTrace {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }
}

fn expansion_of(
    joint_id: u32,
    base_vocab: usize,
    mono: &MonoVocabulary,
    vocab: &crate::tokenizer::Vocabulary,
) -> Result<(Vec<TokenId>, Vec<u8>), DecodeError> {
    if (joint_id as usize) < base_vocab {
        Ok((vec![joint_id], vocab.entry(joint_id)?.to_vec()))
    } else {
        let w = joint_id as usize - base_vocab;
        let word = &mono.words()[w];
        Ok((word.expansion.clone(), word.surface.as_bytes().to_vec()))
    }
}

/// Applies the repetition penalty and temperature to a copy of the joint
/// logits, normalizes with a float64 accumulator, and returns the `k`
/// highest-probability candidates (ties to the lower id) plus the total
/// probability mass, which callers assert to be 1.
pub fn select_topk(
    joint_logits: &[f32],
    base_vocab: usize,
    mono: &MonoVocabulary,
    vocab: &crate::tokenizer::Vocabulary,
    emitted: &HashSet<TokenId>,
    k: usize,
    temperature: f32,
    repetition_penalty: f32,
) -> Result<(Vec<Candidate>, f64), DecodeError> {
    let n = joint_logits.len();
    let mut scaled: Vec<f32> = joint_logits.to_vec();
    for &id in emitted {
        if (id as usize) < base_vocab {
            scaled[id as usize] /= repetition_penalty;
        }
    }
    for v in scaled.iter_mut() {
        *v /= temperature;
    }
    let max = scaled.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = scaled.iter().map(|&v| f64::from(v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let log_total = total.ln();
    let priors: Vec<f32> = scaled
        .iter()
        .map(|&v| (f64::from(v - max) - log_total) as f32)
        .collect();
    let mass: f64 = exps.iter().map(|e| e / total).sum();

    let k = if k > n {
        log::warn!("top-k {k} exceeds joint vocabulary {n}; clamping");
        n
    } else {
        k
    };
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        priors[b as usize]
            .partial_cmp(&priors[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out = Vec::with_capacity(k);
    for &joint_id in order.iter().take(k) {
        let (expansion, surface) = expansion_of(joint_id, base_vocab, mono, vocab)?;
        out.push(Candidate {
            joint_id,
            surface,
            expansion,
            prior: priors[joint_id as usize],
            feasibility: None,
        });
    }
    Ok((out, mass))
}

/// Mean log probability of an expansion: the verification score.
pub fn mean_logprob(parts: &[f32]) -> f32 {
    parts.iter().sum::<f32>() / parts.len() as f32
}

/// Scores every candidate with the base model: a candidate's feasibility is
/// the mean base log probability of its expansion tokens given the current
/// prefix. The first token's probability comes from the already-computed
/// logits at the current position; the rest are read in one batched
/// teacher-forced pass. Candidates whose expansion would overflow the
/// context are dropped and returned separately.
///
/// Returns (kept candidates, dropped candidates, fed positions).
pub fn verify(
    model: &BaseModel,
    state: &DecodeState,
    base_logits_now: &[f32],
    candidates: Vec<Candidate>,
    step: usize,
) -> Result<(Vec<Candidate>, Vec<Candidate>, usize), DecodeError> {
    let ctx = model.config.context_len;
    let t0 = state.len();
    let mut kept = Vec::with_capacity(candidates.len());
    let mut dropped = Vec::new();
    for c in candidates {
        if t0 + c.expansion.len() <= ctx {
            kept.push(c);
        } else {
            dropped.push(c);
        }
    }
    if kept.is_empty() {
        return Err(DecodeError::NoFeasibleCandidate(step));
    }
    let rows: Vec<Vec<TokenId>> = kept
        .iter()
        .filter(|c| c.expansion.len() >= 2)
        .map(|c| c.expansion.clone())
        .collect();
    let fed: usize = rows.iter().map(|r| r.len() - 1).sum();
    let rest = if rows.is_empty() {
        Vec::new()
    } else {
        verify_logprobs(model, state, &rows)?
    };
    let mut rest_iter = rest.into_iter();
    for c in kept.iter_mut() {
        let first = log_softmax_at(base_logits_now, c.expansion[0] as usize);
        let mut parts = vec![first];
        if c.expansion.len() >= 2 {
            parts.extend(rest_iter.next().expect("one result row per multi-token candidate"));
        }
        debug_assert_eq!(parts.len(), c.expansion.len());
        c.feasibility = Some(mean_logprob(&parts));
    }
    Ok((kept, dropped, fed))
}

/// Picks the winning candidate. With feasibilities: argmax feasibility in
/// deterministic mode, else a nucleus-truncated sample from
/// softmax(feasibility / temperature). Without: argmax prior, else a
/// nucleus-truncated sample from the priors, which already carry the
/// temperature.
pub fn choose(
    candidates: &[Candidate],
    config: &DecodeConfig,
    rng: &mut ChaCha8Rng,
    by_feasibility: bool,
) -> usize {
    assert!(!candidates.is_empty());
    let score = |c: &Candidate| -> f32 {
        if by_feasibility {
            c.feasibility.expect("candidate verified before choose") / config.temperature
        } else {
            c.prior
        }
    };
    if config.deterministic {
        let mut best = 0usize;
        for i in 1..candidates.len() {
            let (si, sb) = (score(&candidates[i]), score(&candidates[best]));
            if si > sb || (si == sb && candidates[i].joint_id < candidates[best].joint_id) {
                best = i;
            }
        }
        return best;
    }
    let scores: Vec<f64> = candidates.iter().map(|c| f64::from(score(c))).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();

    // nucleus truncation over the candidate distribution
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(candidates[a].joint_id.cmp(&candidates[b].joint_id))
    });
    let threshold = f64::from(config.top_p) * total;
    let mut kept = Vec::with_capacity(order.len());
    let mut kept_mass = 0.0f64;
    for idx in order {
        kept.push(idx);
        kept_mass += weights[idx];
        if kept_mass >= threshold - 1e-12 {
            break;
        }
    }
    let draw = rng.gen::<f64>() * kept_mass;
    let mut acc = 0.0f64;
    for &idx in &kept {
        acc += weights[idx];
        if draw < acc {
            return idx;
        }
    }
    *kept.last().expect("nucleus keeps at least one candidate")
}

/// Generates from a text prompt encoded with `vocab`.
pub fn generate(
    model: &BaseModel,
    head: Option<&MonoHead>,
    mono: &MonoVocabulary,
    vocab: &crate::tokenizer::Vocabulary,
    prompt: &str,
    config: &DecodeConfig,
) -> Result<(Vec<u8>, DecodeTrace), DecodeError> {
    let ids = vocab.encode(prompt.as_bytes());
    generate_from_ids(model, head, mono, vocab, &ids, config)
}

/// The decoding engine. `prompt_ids` must already be in the model's id
/// space; for the vocabulary-expansion baseline that means segmented joint
/// ids over a vocabulary extended with decode-only word entries.
pub fn generate_from_ids(
    model: &BaseModel,
    head: Option<&MonoHead>,
    mono: &MonoVocabulary,
    vocab: &crate::tokenizer::Vocabulary,
    prompt_ids: &[TokenId],
    config: &DecodeConfig,
) -> Result<(Vec<u8>, DecodeTrace), DecodeError> {
    config.validate()?;
    if vocab.size() != model.config.vocab_size {
        return Err(DecodeError::InvalidConfig(format!(
            "vocabulary size {} != model vocabulary {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    if let Some(h) = head {
        if h.d_model() != model.config.d_model || h.n_words() != mono.len() {
            return Err(DecodeError::InvalidConfig(
                "head dimensions do not match the model and word inventory".into(),
            ));
        }
    }
    if let Some(allowed) = &config.shortlist {
        if let Some(&id) = allowed.iter().find(|&&id| id as usize >= model.config.vocab_size) {
            return Err(DecodeError::InvalidConfig(format!(
                "shortlist id {id} outside the base vocabulary"
            )));
        }
    }
    if prompt_ids.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let ctx = model.config.context_len;
    if prompt_ids.len() >= ctx {
        return Err(DecodeError::PromptTooLong(prompt_ids.len(), ctx));
    }

    let started = Instant::now();
    let base_vocab = model.config.vocab_size;
    let verify_mode = config.mode == DecodeMode::Mumo;
    let use_words = matches!(config.mode, DecodeMode::Mumo | DecodeMode::MumoNoVerify)
        && head.is_some()
        && !mono.is_empty();
    let k = match config.mode {
        DecodeMode::Mumo | DecodeMode::MumoNoVerify => config.k,
        DecodeMode::Vanilla | DecodeMode::Shortlist => config.sample_top_k,
    };

    let mut state = DecodeState::new(model);
    let (hidden, logits) = forward_incremental(model, &mut state, prompt_ids)?;
    let mut invocations = 1usize;
    let mut positions = prompt_ids.len();
    let last = hidden.nrows() - 1;
    let mut cur_hidden: Array1<f32> = hidden.row(last).to_owned();
    let mut cur_logits: Vec<f32> = logits.row(last).to_vec();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut emitted: HashSet<TokenId> = HashSet::new();
    let mut out = Vec::new();
    let mut steps = Vec::new();
    let mut tokens = 0usize;
    let mut truncated = false;

    while tokens < config.max_new_tokens {
        if state.len() + 1 > ctx {
            truncated = true;
            break;
        }
        let step = steps.len() + 1;

        let mut joint = cur_logits.clone();
        if config.mode == DecodeMode::Shortlist {
            let allowed = config.shortlist.as_ref().expect("validated above");
            for (id, v) in joint.iter_mut().enumerate() {
                if !allowed.contains(&(id as TokenId)) {
                    *v = f32::NEG_INFINITY;
                }
            }
        }
        if use_words {
            let word_logits = mono_forward(head.expect("use_words implies head"), &cur_hidden);
            joint.extend(word_logits.iter());
        }

        let (cands, mass) = select_topk(
            &joint,
            base_vocab,
            mono,
            vocab,
            &emitted,
            k,
            config.temperature,
            config.repetition_penalty,
        )?;
        assert!(
            (mass - 1.0).abs() <= 1e-6,
            "joint probabilities must sum to 1, got {mass}"
        );

        // drop what cannot be committed; in verify mode this is part of
        // verification, elsewhere it guards the commit below
        let (kept, dropped, _fed) = if verify_mode {
            let (kept, dropped, fed) = verify(model, &state, &cur_logits, cands, step)?;
            if fed > 0 {
                invocations += 1;
                positions += fed;
            }
            (kept, dropped, fed)
        } else {
            let mut kept = Vec::with_capacity(cands.len());
            let mut dropped = Vec::new();
            for c in cands {
                if state.len() + c.expansion.len() <= ctx {
                    kept.push(c);
                } else {
                    dropped.push(c);
                }
            }
            if kept.is_empty() {
                return Err(DecodeError::NoFeasibleCandidate(step));
            }
            (kept, dropped, 0)
        };

        let idx = choose(&kept, config, &mut rng, verify_mode);
        let chosen = kept[idx].clone();

        let mut records: Vec<CandidateRecord> = Vec::with_capacity(kept.len() + dropped.len());
        for c in &kept {
            records.push(CandidateRecord {
                joint_id: c.joint_id,
                surface: String::from_utf8_lossy(&c.surface).into_owned(),
                prior: c.prior,
                feasibility: c.feasibility,
                dropped: false,
            });
        }
        for c in &dropped {
            records.push(CandidateRecord {
                joint_id: c.joint_id,
                surface: String::from_utf8_lossy(&c.surface).into_owned(),
                prior: c.prior,
                feasibility: None,
                dropped: true,
            });
        }

        let (new_hidden, new_logits) = forward_incremental(model, &mut state, &chosen.expansion)?;
        invocations += 1;
        positions += chosen.expansion.len();
        tokens += chosen.expansion.len();
        for &id in &chosen.expansion {
            emitted.insert(id);
        }
        steps.push(StepRecord {
            step,
            candidates: records,
            chosen: chosen.joint_id,
            committed: chosen.expansion.clone(),
        });

        if config.eot.is_some_and(|e| chosen.expansion.contains(&e)) {
            break;
        }
        out.extend_from_slice(&chosen.surface);

        let last = new_logits.nrows() - 1;
        cur_logits = new_logits.row(last).to_vec();
        cur_hidden = new_hidden.row(last).to_owned();
    }

    let trace = DecodeTrace {
        steps,
        tokens_emitted: tokens,
        invocations,
        positions,
        prompt_tokens: prompt_ids.len(),
        wall_secs: started.elapsed().as_secs_f64(),
        truncated,
    };
    Ok((out, trace))
}

/// Extends the token embedding and output head with one row/column per word,
/// each the mean over the word's expansion ids. Everything else is copied.
pub fn extend_model_with_words(
    model: &BaseModel,
    mono: &MonoVocabulary,
) -> Result<BaseModel, ModelError> {
    let v = model.config.vocab_size;
    let n = mono.len();
    let d = model.config.d_model;
    let mut config = model.config;
    config.vocab_size = v + n;
    let mut tok_emb = ndarray::Array2::zeros((v + n, d));
    tok_emb.slice_mut(ndarray::s![..v, ..]).assign(&model.tok_emb);
    let mut w_out = ndarray::Array2::zeros((d, v + n));
    w_out.slice_mut(ndarray::s![.., ..v]).assign(&model.w_out);
    for (w, word) in mono.words().iter().enumerate() {
        for &id in &word.expansion {
            if id as usize >= v {
                return Err(ModelError::TokenOutOfRange(id, v));
            }
        }
        let inv = 1.0 / word.expansion.len() as f32;
        for c in 0..d {
            let mut e = 0.0f32;
            let mut o = 0.0f32;
            for &id in &word.expansion {
                e += model.tok_emb[[id as usize, c]];
                o += model.w_out[[c, id as usize]];
            }
            tok_emb[[v + w, c]] = e * inv;
            w_out[[c, v + w]] = o * inv;
        }
    }
    Ok(BaseModel {
        config,
        tok_emb,
        pos_emb: model.pos_emb.clone(),
        blocks: model.blocks.clone(),
        ln_f: model.ln_f.clone(),
        w_out,
    })
}

/// The contrast baseline: grow the model's vocabulary by the word inventory
/// and fine-tune all parameters on the corpus re-segmented so word matches
/// become atomic ids. Unlike head fine-tuning this rewrites the base
/// weights, which is the point of the comparison.
pub fn expand_vocab_baseline(
    model: &BaseModel,
    mono: &MonoVocabulary,
    vocab: &crate::tokenizer::Vocabulary,
    corpus: &[u8],
    hyper: &TrainHyper,
) -> Result<(BaseModel, TrainLog), ModelError> {
    let mut ext = extend_model_with_words(model, mono)?;
    let ids = segment_to_joint_ids(&vocab.encode(corpus), mono, model.config.vocab_size);
    let log = train_base(&mut ext, &ids, hyper)?;
    Ok((ext, log))
}

/// Re-encodes a base-token stream as joint ids: word matches collapse to
/// their single extended id.
pub fn segment_to_joint_ids(
    tokens: &[TokenId],
    mono: &MonoVocabulary,
    base_vocab: usize,
) -> Vec<TokenId> {
    let seg = segment_tokens(tokens.to_vec(), mono);
    seg.units
        .iter()
        .map(|&u| match u {
            SegmentUnit::Token(id) => id,
            SegmentUnit::Word(w) => word_joint_id(base_vocab, w),
        })
        .collect()
}
