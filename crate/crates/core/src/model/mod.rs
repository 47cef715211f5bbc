//! A small decoder-only transformer over the byte-level vocabulary.
//!
//! Pre-norm blocks, learned positional embeddings, bias-free linear maps,
//! gelu feed-forward, untied output head. Everything is f32 and runs on one
//! thread; gradients are analytic and checked against finite differences.

mod backward;
mod forward;
mod train;

pub use backward::{backward, ce_loss_and_dlogits, BaseGrads, BlockGrads};
pub use forward::{
    base_logits, forward_full, forward_hidden, forward_incremental, score_continuation,
    verify_logprobs,
    DecodeState, ForwardTrace, LayerTrace,
};
pub use train::{lr_at, mean_nll, train_base, AdamW, TrainHyper, TrainLog, TrainStep};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tokenizer::TokenId;

pub const INIT_STD: f32 = 0.02;
pub const LN_EPS: f32 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("context overflow: position {0} with context length {1}")]
    ContextOverflow(usize, usize),
    #[error("token id {0} out of range (vocab size {1})")]
    TokenOutOfRange(TokenId, usize),
    #[error("training diverged at step {0} (non-finite loss)")]
    Divergence(usize),
    #[error("corpus too small: {0} tokens, need at least {1}")]
    CorpusTooSmall(usize, usize),
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub seed: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            context_len: 256,
            vocab_size: 256 + 2000,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 4 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} must be divisible by 4 for the mono head",
                self.d_model
            )));
        }
        if self.context_len < 32 {
            return Err(ModelError::InvalidConfig(format!(
                "context_len {} below minimum 32",
                self.context_len
            )));
        }
        // a merge-free byte vocabulary is the smallest legal one
        if self.vocab_size < 256 {
            return Err(ModelError::InvalidConfig(format!(
                "vocab_size {} below minimum 256",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Array1<f32>,
    pub bias: Array1<f32>,
}

impl LayerNorm {
    fn ones(d: usize) -> Self {
        Self { gain: Array1::ones(d), bias: Array1::zeros(d) }
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Array2<f32>,
    pub wk: Array2<f32>,
    pub wv: Array2<f32>,
    pub wo: Array2<f32>,
    pub ln2: LayerNorm,
    pub w_fc: Array2<f32>,
    pub w_proj: Array2<f32>,
}

#[derive(Debug, Clone)]
pub struct BaseModel {
    pub config: ModelConfig,
    pub tok_emb: Array2<f32>,
    pub pos_emb: Array2<f32>,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub w_out: Array2<f32>,
}

/// Gaussian(0, 0.02) weights drawn in parameter order from a seeded stream;
/// norm gains start at one and biases at zero so early activations pass
/// through unscaled.
pub fn init_model(config: ModelConfig) -> Result<BaseModel, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed as u64);
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let mut gauss = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
    };
    let d = config.d_model;
    let ff = 4 * d;
    let blocks = (0..config.n_layers)
        .map(|_| Block {
            ln1: LayerNorm::ones(d),
            wq: gauss(d, d),
            wk: gauss(d, d),
            wv: gauss(d, d),
            wo: gauss(d, d),
            ln2: LayerNorm::ones(d),
            w_fc: gauss(d, ff),
            w_proj: gauss(ff, d),
        })
        .collect();
    Ok(BaseModel {
        tok_emb: gauss(config.vocab_size, d),
        pos_emb: gauss(config.context_len, d),
        blocks,
        ln_f: LayerNorm::ones(d),
        w_out: gauss(d, config.vocab_size),
        config,
    })
}

/// All-zero parameter tensors for the given shape. Deserialization fills
/// these in place; the zeros themselves are never meant to be run.
pub fn zeroed_model(config: ModelConfig) -> Result<BaseModel, ModelError> {
    config.validate()?;
    let d = config.d_model;
    let ff = 4 * d;
    let blocks = (0..config.n_layers)
        .map(|_| Block {
            ln1: LayerNorm::ones(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2: LayerNorm::ones(d),
            w_fc: Array2::zeros((d, ff)),
            w_proj: Array2::zeros((ff, d)),
        })
        .collect();
    Ok(BaseModel {
        tok_emb: Array2::zeros((config.vocab_size, d)),
        pos_emb: Array2::zeros((config.context_len, d)),
        blocks,
        ln_f: LayerNorm::ones(d),
        w_out: Array2::zeros((d, config.vocab_size)),
        config,
    })
}

impl BaseModel {
    /// Visits every parameter tensor in canonical order. The same order
    /// backs the digest, serialization, and the optimizer, so it must never
    /// change silently.
    pub fn visit_named(&self, f: &mut impl FnMut(&str, &[usize], &[f32])) {
        f("tok_emb", self.tok_emb.shape(), self.tok_emb.as_slice().unwrap());
        f("pos_emb", self.pos_emb.shape(), self.pos_emb.as_slice().unwrap());
        for (i, b) in self.blocks.iter().enumerate() {
            let n = |s: &str| format!("block{i}.{s}");
            f(&n("ln1.gain"), b.ln1.gain.shape(), b.ln1.gain.as_slice().unwrap());
            f(&n("ln1.bias"), b.ln1.bias.shape(), b.ln1.bias.as_slice().unwrap());
            f(&n("wq"), b.wq.shape(), b.wq.as_slice().unwrap());
            f(&n("wk"), b.wk.shape(), b.wk.as_slice().unwrap());
            f(&n("wv"), b.wv.shape(), b.wv.as_slice().unwrap());
            f(&n("wo"), b.wo.shape(), b.wo.as_slice().unwrap());
            f(&n("ln2.gain"), b.ln2.gain.shape(), b.ln2.gain.as_slice().unwrap());
            f(&n("ln2.bias"), b.ln2.bias.shape(), b.ln2.bias.as_slice().unwrap());
            f(&n("w_fc"), b.w_fc.shape(), b.w_fc.as_slice().unwrap());
            f(&n("w_proj"), b.w_proj.shape(), b.w_proj.as_slice().unwrap());
        }
        f("ln_f.gain", self.ln_f.gain.shape(), self.ln_f.gain.as_slice().unwrap());
        f("ln_f.bias", self.ln_f.bias.shape(), self.ln_f.bias.as_slice().unwrap());
        f("w_out", self.w_out.shape(), self.w_out.as_slice().unwrap());
    }

    /// Mutable parameter slices in canonical order, paired with whether
    /// weight decay applies (matrices yes, norm vectors no).
    pub fn param_slices_mut(&mut self) -> Vec<(&mut [f32], bool)> {
        let mut v: Vec<(&mut [f32], bool)> = Vec::new();
        v.push((self.tok_emb.as_slice_mut().unwrap(), true));
        v.push((self.pos_emb.as_slice_mut().unwrap(), true));
        for b in self.blocks.iter_mut() {
            v.push((b.ln1.gain.as_slice_mut().unwrap(), false));
            v.push((b.ln1.bias.as_slice_mut().unwrap(), false));
            v.push((b.wq.as_slice_mut().unwrap(), true));
            v.push((b.wk.as_slice_mut().unwrap(), true));
            v.push((b.wv.as_slice_mut().unwrap(), true));
            v.push((b.wo.as_slice_mut().unwrap(), true));
            v.push((b.ln2.gain.as_slice_mut().unwrap(), false));
            v.push((b.ln2.bias.as_slice_mut().unwrap(), false));
            v.push((b.w_fc.as_slice_mut().unwrap(), true));
            v.push((b.w_proj.as_slice_mut().unwrap(), true));
        }
        v.push((self.ln_f.gain.as_slice_mut().unwrap(), false));
        v.push((self.ln_f.bias.as_slice_mut().unwrap(), false));
        v.push((self.w_out.as_slice_mut().unwrap(), true));
        v
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_named(&mut |_, _, data| n += data.len());
        n
    }

    /// Content digest over every parameter byte. Any single-byte change in
    /// any tensor changes the digest; it is the identity the head file pins.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit_named(&mut |name, shape, data| {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for &dim in shape {
                hasher.update((dim as u32).to_le_bytes());
            }
            for &x in data {
                hasher.update(x.to_le_bytes());
            }
        });
        hex(&hasher.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
