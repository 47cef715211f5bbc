//! Monolingual output head: a gated FFN plus word projection grafted onto a
//! frozen base model, scoring whole target-language words alongside the base
//! vocabulary.
//!
//! The head owns four dense matrices and nothing else. Fine-tuning borrows
//! the base model immutably, so freezing is enforced by the type system and
//! double-checked with parameter digests.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::math::{silu, silu_grad};
use crate::model::{
    base_logits, forward_hidden, hex, lr_at, AdamW, BaseModel, ModelError, TrainHyper, TrainStep,
    INIT_STD,
};
use crate::tokenizer::{MonoVocabulary, Segmentation, SegmentUnit, TokenId};

/// Words are scored in a joint id space: base token ids keep their value,
/// word w maps to `base_vocab + w`.
pub fn word_joint_id(base_vocab: usize, word: u32) -> u32 {
    base_vocab as u32 + word
}

/// FFN + projection over the word inventory. Shapes follow the row-vector
/// convention used by the base model: an input row h of length d is pushed
/// through `silu(h W_gate) * (h W1)`, projected back to d by W2, then scored
/// against one column per word.
#[derive(Debug, Clone)]
pub struct MonoHead {
    pub w1: Array2<f32>,     // [d, d_ffn]
    pub w_gate: Array2<f32>, // [d, d_ffn]
    pub w2: Array2<f32>,     // [d_ffn, d]
    pub g_mono: Array2<f32>, // [d, n_words]
}

/// How to fill the head's tensors before fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Each word's output column is the mean of its expansion tokens' base
    /// output columns; W2 is a scaled transpose of W1 so the untrained FFN
    /// behaves like a positive-scaled identity instead of scrambling h.
    Multi,
    /// Every tensor Gaussian(0, 0.02).
    Random,
}

impl MonoHead {
    pub fn d_model(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_ffn(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_words(&self) -> usize {
        self.g_mono.ncols()
    }

    /// Canonical tensor walk, mirrored by the gradient struct.
    pub fn visit_named(&self, mut f: impl FnMut(&str, &[usize], &[f32])) {
        f("w1", &[self.w1.nrows(), self.w1.ncols()], self.w1.as_slice().unwrap());
        f(
            "w_gate",
            &[self.w_gate.nrows(), self.w_gate.ncols()],
            self.w_gate.as_slice().unwrap(),
        );
        f("w2", &[self.w2.nrows(), self.w2.ncols()], self.w2.as_slice().unwrap());
        f(
            "g_mono",
            &[self.g_mono.nrows(), self.g_mono.ncols()],
            self.g_mono.as_slice().unwrap(),
        );
    }

    /// Mutable slices plus weight-decay flags, in canonical order. All four
    /// tensors are dense matrices, so all of them decay.
    pub fn param_slices_mut(&mut self) -> Vec<(&mut [f32], bool)> {
        vec![
            (self.w1.as_slice_mut().unwrap(), true),
            (self.w_gate.as_slice_mut().unwrap(), true),
            (self.w2.as_slice_mut().unwrap(), true),
            (self.g_mono.as_slice_mut().unwrap(), true),
        ]
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_named(|_, _, data| n += data.len());
        n
    }

    /// SHA-256 over tensor names, shapes, and raw little-endian values, same
    /// scheme as the base model digest.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit_named(|name, dims, data| {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for &d in dims {
                hasher.update((d as u32).to_le_bytes());
            }
            for &v in data {
                hasher.update(v.to_le_bytes());
            }
        });
        hex(&hasher.finalize())
    }
}

/// Builds a head for `mono` against `model`, with the word projection either
/// seeded from the base output head or fully random.
pub fn init_mono_head(
    strategy: HeadInit,
    model: &BaseModel,
    mono: &MonoVocabulary,
    seed: u64,
) -> Result<MonoHead, ModelError> {
    let d = model.config.d_model;
    let d_ffn = (d / 4).max(4);
    let n_words = mono.len();
    let vocab = model.config.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, INIT_STD).unwrap();
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
    };

    let w1 = draw(d, d_ffn);
    let w_gate = draw(d, d_ffn);
    let (w2, g_mono) = match strategy {
        HeadInit::Random => (draw(d_ffn, d), draw(d, n_words)),
        HeadInit::Multi => {
            // as_standard_layout keeps the transposed copy row-major so the
            // flat parameter walk can slice it
            let w2 = w1.t().as_standard_layout().to_owned() * (2.0 / d_ffn as f32);
            let mut g_mono = Array2::zeros((d, n_words));
            for (w, word) in mono.words().iter().enumerate() {
                for &id in &word.expansion {
                    if id as usize >= vocab {
                        return Err(ModelError::TokenOutOfRange(id, vocab));
                    }
                }
                let inv = 1.0 / word.expansion.len() as f32;
                for r in 0..d {
                    let mut acc = 0.0f32;
                    for &id in &word.expansion {
                        acc += model.w_out[[r, id as usize]];
                    }
                    g_mono[[r, w]] = acc * inv;
                }
            }
            (w2, g_mono)
        }
    };
    Ok(MonoHead { w1, w_gate, w2, g_mono })
}

/// Word logits for a single hidden row:
/// `(silu(h W_gate) * (h W1)) W2 g_mono`.
pub fn mono_forward(head: &MonoHead, h: &Array1<f32>) -> Array1<f32> {
    let a = h.dot(&head.w1);
    let gate = h.dot(&head.w_gate).mapv(silu);
    let f = &gate * &a;
    f.dot(&head.w2).dot(&head.g_mono)
}

/// Intermediate activations of the batched head forward, kept for backward.
pub struct MonoTrace {
    /// pre-gate linear, [rows, d_ffn]
    pub a: Array2<f32>,
    /// gate pre-activation, [rows, d_ffn]
    pub b: Array2<f32>,
    /// gated product silu(b) * a, [rows, d_ffn]
    pub f: Array2<f32>,
    /// FFN output, [rows, d]
    pub z: Array2<f32>,
}

/// Batched word logits for hidden rows `hs`, plus the trace.
pub fn mono_forward_batch(head: &MonoHead, hs: &Array2<f32>) -> (MonoTrace, Array2<f32>) {
    let a = hs.dot(&head.w1);
    let b = hs.dot(&head.w_gate);
    let f = &b.mapv(silu) * &a;
    let z = f.dot(&head.w2);
    let logits = z.dot(&head.g_mono);
    (MonoTrace { a, b, f, z }, logits)
}

/// Base logits followed by word logits. The base slice is produced by the
/// same routine vanilla decoding uses, so it is bitwise identical to it.
pub fn joint_logits(model: &BaseModel, head: &MonoHead, h: &Array1<f32>) -> Array1<f32> {
    let base = base_logits(model, h);
    let mono = mono_forward(head, h);
    let mut out = Array1::zeros(base.len() + mono.len());
    out.slice_mut(ndarray::s![..base.len()]).assign(&base);
    out.slice_mut(ndarray::s![base.len()..]).assign(&mono);
    out
}

/// Gradients for the four head tensors, canonical order.
pub struct HeadGrads {
    pub w1: Array2<f32>,
    pub w_gate: Array2<f32>,
    pub w2: Array2<f32>,
    pub g_mono: Array2<f32>,
}

impl HeadGrads {
    pub fn zeros_like(head: &MonoHead) -> Self {
        Self {
            w1: Array2::zeros(head.w1.dim()),
            w_gate: Array2::zeros(head.w_gate.dim()),
            w2: Array2::zeros(head.w2.dim()),
            g_mono: Array2::zeros(head.g_mono.dim()),
        }
    }

    pub fn zero(&mut self) {
        for t in [&mut self.w1, &mut self.w_gate, &mut self.w2, &mut self.g_mono] {
            t.fill(0.0);
        }
    }

    pub fn param_slices(&self) -> Vec<&[f32]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.w_gate.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.g_mono.as_slice().unwrap(),
        ]
    }
}

/// Accumulates head gradients for a batch of hidden rows `hs` given the
/// gradient of the loss w.r.t. the word logits. The base model is frozen, so
/// no gradient flows back into `hs`.
pub fn mono_backward(
    head: &MonoHead,
    hs: &Array2<f32>,
    trace: &MonoTrace,
    dlogits_mono: &Array2<f32>,
    grads: &mut HeadGrads,
) {
    let dz = dlogits_mono.dot(&head.g_mono.t());
    grads.g_mono = &grads.g_mono + &trace.z.t().dot(dlogits_mono);
    let df = dz.dot(&head.w2.t());
    grads.w2 = &grads.w2 + &trace.f.t().dot(&dz);
    let s = trace.b.mapv(silu);
    let da = &df * &s;
    let db = &(&df * &trace.a) * &trace.b.mapv(silu_grad);
    grads.w1 = &grads.w1 + &hs.t().dot(&da);
    grads.w_gate = &grads.w_gate + &hs.t().dot(&db);
}

/// One supervised window: a token prefix plus (position, joint target) pairs.
/// A target at position p labels the unit that starts at p+1; positions
/// inside a word's expansion carry no target.
#[derive(Debug, Clone)]
pub struct TrainingUnit {
    pub input: Vec<TokenId>,
    pub targets: Vec<(usize, u32)>,
}

/// Segments each text into word/token units and turns it into supervised
/// windows of at most `context_len` tokens, split at unit boundaries with a
/// one-token overlap. The first unit of a text is context only; every later
/// unit contributes exactly one target at the position before its start.
pub fn build_training_units(
    texts: &[&str],
    mono: &MonoVocabulary,
    vocab: &crate::tokenizer::Vocabulary,
    context_len: usize,
) -> Vec<TrainingUnit> {
    let base_vocab = vocab.size();
    let mut out = Vec::new();
    for text in texts {
        let seg = crate::tokenizer::segment_forward_max_match(text.as_bytes(), mono, vocab);
        out.extend(units_from_segmentation(&seg, base_vocab, context_len));
    }
    out
}

fn joint_target(unit: SegmentUnit, base_vocab: usize) -> u32 {
    match unit {
        SegmentUnit::Token(id) => id,
        SegmentUnit::Word(w) => word_joint_id(base_vocab, w),
    }
}

fn units_from_segmentation(
    seg: &Segmentation,
    base_vocab: usize,
    context_len: usize,
) -> Vec<TrainingUnit> {
    let n_units = seg.units.len();
    let total = seg.tokens.len();
    // units tile the token stream, so unit i ends where unit i+1 starts
    let unit_end = |i: usize| if i + 1 < n_units { seg.starts[i + 1] } else { total };
    let mut windows = Vec::new();
    if total < 2 {
        return windows;
    }
    let mut first_unit = 0usize;
    let mut w_start = 0usize;
    while first_unit < n_units {
        let mut last = first_unit;
        let mut end = unit_end(last);
        debug_assert!(end - w_start <= context_len, "one unit exceeds the context window");
        while last + 1 < n_units {
            let next_end = unit_end(last + 1);
            if next_end - w_start > context_len {
                break;
            }
            last += 1;
            end = next_end;
        }
        let mut targets = Vec::new();
        for u in first_unit..=last {
            if seg.starts[u] > w_start {
                targets.push((seg.starts[u] - 1 - w_start, joint_target(seg.units[u], base_vocab)));
            }
        }
        if !targets.is_empty() {
            windows.push(TrainingUnit { input: seg.tokens[w_start..end].to_vec(), targets });
        }
        if end >= total {
            break;
        }
        w_start = end - 1;
        first_unit = last + 1;
    }
    windows
}

/// Joint cross-entropy over every target in `units`, in nats.
pub fn eval_units_joint_ce(
    model: &BaseModel,
    head: &MonoHead,
    units: &[TrainingUnit],
) -> Result<f32, ModelError> {
    let mut loss = 0.0f64;
    let mut count = 0usize;
    for unit in units {
        let (hs, targets) = gather_loss_rows(model, unit)?;
        let joint = joint_rows(model, head, &hs);
        for (i, &(_, target)) in unit.targets.iter().enumerate() {
            let row = joint.row(i);
            loss -= f64::from(crate::math::log_softmax_at(
                row.as_slice().unwrap(),
                target as usize,
            ));
            count += 1;
        }
        debug_assert_eq!(targets.len(), unit.targets.len());
    }
    Ok((loss / count.max(1) as f64) as f32)
}

/// Mean 1-based rank of the correct word among all joint logits, over the
/// targets that are word targets. `None` when no such target exists.
pub fn mean_word_target_rank(
    model: &BaseModel,
    head: &MonoHead,
    units: &[TrainingUnit],
) -> Result<Option<f64>, ModelError> {
    let base_vocab = model.config.vocab_size as u32;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for unit in units {
        let (hs, _) = gather_loss_rows(model, unit)?;
        let joint = joint_rows(model, head, &hs);
        for (i, &(_, target)) in unit.targets.iter().enumerate() {
            if target < base_vocab {
                continue;
            }
            let row = joint.row(i);
            let t = row[target as usize];
            let rank = 1 + row.iter().filter(|&&v| v > t).count();
            total += rank as f64;
            count += 1;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Hidden rows at the supervised positions of one window, plus the targets.
fn gather_loss_rows(
    model: &BaseModel,
    unit: &TrainingUnit,
) -> Result<(Array2<f32>, Vec<u32>), ModelError> {
    let hidden = forward_hidden(model, &unit.input)?;
    let d = hidden.ncols();
    let mut hs = Array2::zeros((unit.targets.len(), d));
    let mut targets = Vec::with_capacity(unit.targets.len());
    for (i, &(pos, target)) in unit.targets.iter().enumerate() {
        hs.row_mut(i).assign(&hidden.row(pos));
        targets.push(target);
    }
    Ok((hs, targets))
}

fn joint_rows(model: &BaseModel, head: &MonoHead, hs: &Array2<f32>) -> Array2<f32> {
    let base = hs.dot(&model.w_out);
    let (_, mono) = mono_forward_batch(head, hs);
    let mut joint = Array2::zeros((hs.nrows(), base.ncols() + mono.ncols()));
    joint.slice_mut(ndarray::s![.., ..base.ncols()]).assign(&base);
    joint.slice_mut(ndarray::s![.., base.ncols()..]).assign(&mono);
    joint
}

#[derive(Debug, Clone)]
pub struct FinetuneLog {
    pub steps: Vec<TrainStep>,
    pub probe_ce_start: f32,
    pub probe_ce_end: f32,
    pub base_digest_before: String,
    pub base_digest_after: String,
}

/// Fine-tunes only the head on joint cross-entropy. The base model never
/// receives an update: it is borrowed immutably and its digest is recorded
/// before and after so callers can assert the frozen contract end to end.
pub fn finetune_head(
    model: &BaseModel,
    head: &mut MonoHead,
    units: &[TrainingUnit],
    hyper: &TrainHyper,
) -> Result<FinetuneLog, ModelError> {
    if units.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let base_digest_before = model.digest();
    let mut data_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9e37_79b9_7f4a_7c15);
    let probe: Vec<TrainingUnit> = (0..8.min(units.len()))
        .map(|_| units[rand::Rng::gen_range(&mut probe_rng, 0..units.len())].clone())
        .collect();
    let probe_ce_start = eval_units_joint_ce(model, head, &probe)?;

    let sizes: Vec<usize> = {
        let mut s = Vec::new();
        head.visit_named(|_, _, data| s.push(data.len()));
        s
    };
    let mut opt = AdamW::new(&sizes, hyper.weight_decay);
    let mut grads = HeadGrads::zeros_like(head);
    let mut steps = Vec::with_capacity(hyper.steps);
    let base_vocab = model.config.vocab_size;

    for step in 1..=hyper.steps {
        let batch: Vec<&TrainingUnit> = (0..hyper.batch)
            .map(|_| &units[rand::Rng::gen_range(&mut data_rng, 0..units.len())])
            .collect();
        let mut rows: Vec<Array2<f32>> = Vec::with_capacity(batch.len());
        let mut targets: Vec<u32> = Vec::new();
        for unit in &batch {
            let (hs, t) = gather_loss_rows(model, unit)?;
            rows.push(hs);
            targets.extend(t);
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let hs = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
        let (trace, mono) = mono_forward_batch(head, &hs);
        let base = hs.dot(&model.w_out);
        let mut joint = Array2::zeros((hs.nrows(), base_vocab + mono.ncols()));
        joint.slice_mut(ndarray::s![.., ..base_vocab]).assign(&base);
        joint.slice_mut(ndarray::s![.., base_vocab..]).assign(&mono);

        let (loss, djoint) = crate::model::ce_loss_and_dlogits(&joint, &targets);
        if !loss.is_finite() {
            return Err(ModelError::Divergence(step));
        }
        // The base slice of djoint would flow into frozen parameters; only
        // the word slice reaches the head.
        let dmono = djoint.slice(ndarray::s![.., base_vocab..]).to_owned();
        grads.zero();
        mono_backward(head, &hs, &trace, &dmono, &mut grads);
        let lr = lr_at(step, hyper);
        opt.step(lr, head.param_slices_mut(), &grads.param_slices());
        steps.push(TrainStep { step, loss, lr });
    }

    let probe_ce_end = eval_units_joint_ce(model, head, &probe)?;
    let base_digest_after = model.digest();
    Ok(FinetuneLog {
        steps,
        probe_ce_start,
        probe_ce_end,
        base_digest_before,
        base_digest_after,
    })
}
