//! Next-token training for the base model: AdamW, linear warmup into a
//! cosine decay, fixed probe batch for before/after loss comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::{backward, ce_loss_and_dlogits, BaseGrads};
use super::forward::forward_full;
use super::{BaseModel, ModelError};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainHyper {
    pub lr: f32,
    pub steps: usize,
    pub batch: usize,
    /// warmup steps; a 0.04 ratio of `steps` is the usual choice
    pub warmup: usize,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 2000,
            batch: 4,
            warmup: 80,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f32,
    pub lr: f32,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub steps: Vec<TrainStep>,
    pub probe_loss_start: f32,
    pub probe_loss_end: f32,
}

/// Decoupled weight decay Adam. One slot per parameter tensor, in the
/// model's canonical order.
pub struct AdamW {
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(sizes: &[usize], weight_decay: f32) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// `params` pairs each tensor with its decay flag; `grads` follows the
    /// same order.
    pub fn step(&mut self, lr: f32, params: Vec<(&mut [f32], bool)>, grads: &[&[f32]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, ((p, decay), g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let wd = if decay { self.weight_decay } else { 0.0 };
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * p[j]);
            }
        }
    }
}

/// Linear warmup to `lr`, then cosine decay to zero. `step` is 1-based.
pub fn lr_at(step: usize, hyper: &TrainHyper) -> f32 {
    if hyper.warmup > 0 && step <= hyper.warmup {
        return hyper.lr * step as f32 / hyper.warmup as f32;
    }
    let total = hyper.steps.saturating_sub(hyper.warmup).max(1);
    let done = (step - hyper.warmup) as f32 / total as f32;
    hyper.lr * 0.5 * (1.0 + (std::f32::consts::PI * done).cos())
}

fn sample_window(corpus: &[TokenId], len: usize, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    let start = rng.gen_range(0..=corpus.len() - len);
    corpus[start..start + len].to_vec()
}

fn batch_loss(
    model: &BaseModel,
    windows: &[Vec<TokenId>],
    grads: Option<&mut BaseGrads>,
) -> Result<f32, ModelError> {
    let mut total = 0.0f32;
    let mut grads = grads;
    for w in windows {
        let input = &w[..w.len() - 1];
        let targets = &w[1..];
        let (trace, logits) = forward_full(model, input)?;
        let (loss, mut dlogits) = ce_loss_and_dlogits(&logits, targets);
        total += loss;
        if let Some(g) = grads.as_deref_mut() {
            dlogits /= windows.len() as f32;
            backward(model, &trace, &dlogits, g);
        }
    }
    Ok(total / windows.len() as f32)
}

/// Trains in place. Windows are one token longer than the model context so
/// every input position carries a next-token target. Equal seeds and data
/// give bitwise-equal parameters; a non-finite loss aborts.
pub fn train_base(
    model: &mut BaseModel,
    corpus: &[TokenId],
    hyper: &TrainHyper,
) -> Result<TrainLog, ModelError> {
    let window = model.config.context_len + 1;
    if corpus.len() < window {
        return Err(ModelError::CorpusTooSmall(corpus.len(), window));
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9e37_79b9_7f4a_7c15);
    let probe: Vec<Vec<TokenId>> = (0..hyper.batch.max(1))
        .map(|_| sample_window(corpus, window, &mut probe_rng))
        .collect();
    let probe_loss_start = batch_loss(model, &probe, None)?;

    let mut grads = BaseGrads::zeros_like(model);
    let sizes: Vec<usize> = grads.param_slices().iter().map(|s| s.len()).collect();
    let mut opt = AdamW::new(&sizes, hyper.weight_decay);
    let mut steps = Vec::with_capacity(hyper.steps);

    for step in 1..=hyper.steps {
        let windows: Vec<Vec<TokenId>> = (0..hyper.batch)
            .map(|_| sample_window(corpus, window, &mut data_rng))
            .collect();
        grads.zero();
        let loss = batch_loss(model, &windows, Some(&mut grads))?;
        if !loss.is_finite() {
            return Err(ModelError::Divergence(step));
        }
        let lr = lr_at(step, hyper);
        opt.step(lr, model.param_slices_mut(), &grads.param_slices());
        steps.push(TrainStep { step, loss, lr });
    }

    let probe_loss_end = batch_loss(model, &probe, None)?;
    Ok(TrainLog { steps, probe_loss_start, probe_loss_end })
}

/// Mean next-token cross-entropy of the model over a token stream,
/// evaluated in non-overlapping windows. exp() of this is the perplexity.
pub fn mean_nll(model: &BaseModel, tokens: &[TokenId]) -> Result<f32, ModelError> {
    let window = model.config.context_len;
    if tokens.len() < 2 {
        return Err(ModelError::CorpusTooSmall(tokens.len(), 2));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut start = 0;
    while start + 1 < tokens.len() {
        let end = (start + window + 1).min(tokens.len());
        let w = &tokens[start..end];
        let (_, logits) = forward_full(model, &w[..w.len() - 1])?;
        for (i, &target) in w[1..].iter().enumerate() {
            total -= f64::from(crate::math::log_softmax_at(
                logits.row(i).as_slice().unwrap(),
                target as usize,
            ));
            count += 1;
        }
        start = end - 1;
    }
    Ok((total / count as f64) as f32)
}
