//! Forward passes: full (with activation trace for training), incremental
//! (KV cache for decoding), and batched continuation scoring for the
//! verification step. The three paths are independent implementations of
//! the same network and are held together by equivalence tests.

use ndarray::{s, Array2, Array3, Axis};

use super::{BaseModel, LayerNorm, ModelError, LN_EPS};
use crate::math::log_softmax_at;
use crate::tokenizer::TokenId;

pub(crate) fn ln_forward(x: &Array2<f32>, ln: &LayerNorm) -> Array2<f32> {
    let d = x.ncols();
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let mean = row.sum() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * ln.gain[j] + ln.bias[j];
        }
    }
    y
}

fn embed(model: &BaseModel, ids: &[TokenId], t0: usize) -> Result<Array2<f32>, ModelError> {
    let cfg = &model.config;
    if ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if t0 + ids.len() > cfg.context_len {
        return Err(ModelError::ContextOverflow(t0 + ids.len(), cfg.context_len));
    }
    let mut x = Array2::zeros((ids.len(), cfg.d_model));
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange(id, cfg.vocab_size));
        }
        let row = &model.tok_emb.row(id as usize) + &model.pos_emb.row(t0 + i);
        x.row_mut(i).assign(&row);
    }
    Ok(x)
}

/// Activations recorded by [`forward_full`], consumed by the backward pass.
pub struct LayerTrace {
    pub x_in: Array2<f32>,
    pub xn1: Array2<f32>,
    pub q: Array2<f32>,
    pub k: Array2<f32>,
    pub v: Array2<f32>,
    /// attention probabilities, [heads, T, T], rows causal
    pub att: Array3<f32>,
    pub att_out: Array2<f32>,
    pub x_mid: Array2<f32>,
    pub xn2: Array2<f32>,
    pub f1: Array2<f32>,
    pub g: Array2<f32>,
}

pub struct ForwardTrace {
    pub ids: Vec<TokenId>,
    pub layers: Vec<LayerTrace>,
    pub h_pre: Array2<f32>,
    /// final-norm output, the hidden states the output heads consume
    pub hidden: Array2<f32>,
}

/// Teacher-forced forward over a whole window. Returns the trace and the
/// logits at every position.
pub fn forward_full(
    model: &BaseModel,
    ids: &[TokenId],
) -> Result<(ForwardTrace, Array2<f32>), ModelError> {
    let cfg = &model.config;
    let t = ids.len();
    let (dh, heads) = (cfg.d_head(), cfg.n_heads);
    let scale = 1.0 / (dh as f32).sqrt();
    let mut x = embed(model, ids, 0)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for b in &model.blocks {
        let x_in = x.clone();
        let xn1 = ln_forward(&x, &b.ln1);
        let q = xn1.dot(&b.wq);
        let k = xn1.dot(&b.wk);
        let v = xn1.dot(&b.wv);
        let mut att = Array3::zeros((heads, t, t));
        let mut att_out = Array2::zeros((t, cfg.d_model));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            for i in 0..t {
                let mut row = scores.row_mut(i);
                for j in i + 1..t {
                    row[j] = f32::NEG_INFINITY;
                }
                crate::math::softmax(row.as_slice_mut().unwrap());
            }
            att_out.slice_mut(cols).assign(&scores.dot(&vh));
            att.index_axis_mut(Axis(0), h).assign(&scores);
        }
        let y = att_out.dot(&b.wo);
        let x_mid = &x + &y;
        let xn2 = ln_forward(&x_mid, &b.ln2);
        let f1 = xn2.dot(&b.w_fc);
        let g = f1.mapv(crate::math::gelu);
        let f2 = g.dot(&b.w_proj);
        x = &x_mid + &f2;
        layers.push(LayerTrace { x_in, xn1, q, k, v, att, att_out, x_mid, xn2, f1, g });
    }
    let h_pre = x;
    let hidden = ln_forward(&h_pre, &model.ln_f);
    let logits = hidden.dot(&model.w_out);
    Ok((ForwardTrace { ids: ids.to_vec(), layers, h_pre, hidden }, logits))
}

/// Hidden states only: the same computation as [`forward_full`] minus the
/// trace bookkeeping and the output projection. Used where the caller wants
/// representation rows but not full-vocabulary logits, e.g. fine-tuning a
/// head against a frozen base.
pub fn forward_hidden(model: &BaseModel, ids: &[TokenId]) -> Result<Array2<f32>, ModelError> {
    let cfg = &model.config;
    let t = ids.len();
    let (dh, heads) = (cfg.d_head(), cfg.n_heads);
    let scale = 1.0 / (dh as f32).sqrt();
    let mut x = embed(model, ids, 0)?;
    for b in &model.blocks {
        let xn1 = ln_forward(&x, &b.ln1);
        let q = xn1.dot(&b.wq);
        let k = xn1.dot(&b.wk);
        let v = xn1.dot(&b.wv);
        let mut att_out = Array2::zeros((t, cfg.d_model));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            for i in 0..t {
                let mut row = scores.row_mut(i);
                for j in i + 1..t {
                    row[j] = f32::NEG_INFINITY;
                }
                crate::math::softmax(row.as_slice_mut().unwrap());
            }
            att_out.slice_mut(cols).assign(&scores.dot(&vh));
        }
        let y = att_out.dot(&b.wo);
        let x_mid = &x + &y;
        let xn2 = ln_forward(&x_mid, &b.ln2);
        let f1 = xn2.dot(&b.w_fc);
        let g = f1.mapv(crate::math::gelu);
        let f2 = g.dot(&b.w_proj);
        x = &x_mid + &f2;
    }
    Ok(ln_forward(&x, &model.ln_f))
}

/// Per-layer key/value cache plus the committed token ids.
#[derive(Debug, Clone)]
pub struct DecodeState {
    ids: Vec<TokenId>,
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl DecodeState {
    pub fn new(model: &BaseModel) -> Self {
        Self {
            ids: Vec::new(),
            k: vec![Vec::new(); model.config.n_layers],
            v: vec![Vec::new(); model.config.n_layers],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }
}

/// Runs `new_ids` through the model, extending the cache. Returns hidden
/// states and logits for the new positions only.
pub fn forward_incremental(
    model: &BaseModel,
    state: &mut DecodeState,
    new_ids: &[TokenId],
) -> Result<(Array2<f32>, Array2<f32>), ModelError> {
    let cfg = &model.config;
    let (dh, heads, d) = (cfg.d_head(), cfg.n_heads, cfg.d_model);
    let scale = 1.0 / (dh as f32).sqrt();
    let t0 = state.len();
    let n = new_ids.len();
    let mut x = embed(model, new_ids, t0)?;
    for (l, b) in model.blocks.iter().enumerate() {
        let xn1 = ln_forward(&x, &b.ln1);
        let q = xn1.dot(&b.wq);
        let k = xn1.dot(&b.wk);
        let v = xn1.dot(&b.wv);
        state.k[l].extend_from_slice(k.as_slice().unwrap());
        state.v[l].extend_from_slice(v.as_slice().unwrap());
        let kc = &state.k[l];
        let vc = &state.v[l];
        let mut att_out = Array2::zeros((n, d));
        let qs = q.as_slice().unwrap();
        for i in 0..n {
            let span = t0 + i + 1; // causal horizon for this query
            for h in 0..heads {
                let c0 = h * dh;
                let mut scores = Vec::with_capacity(span);
                for j in 0..span {
                    let mut dot = 0.0f32;
                    for c in 0..dh {
                        dot += qs[i * d + c0 + c] * kc[j * d + c0 + c];
                    }
                    scores.push(dot * scale);
                }
                crate::math::softmax(&mut scores);
                for (j, &a) in scores.iter().enumerate() {
                    for c in 0..dh {
                        att_out[[i, c0 + c]] += a * vc[j * d + c0 + c];
                    }
                }
            }
        }
        let y = att_out.dot(&b.wo);
        x += &y;
        let xn2 = ln_forward(&x, &b.ln2);
        let f2 = xn2.dot(&b.w_fc).mapv(crate::math::gelu).dot(&b.w_proj);
        x += &f2;
    }
    let hidden = ln_forward(&x, &model.ln_f);
    let logits = hidden.dot(&model.w_out);
    state.ids.extend_from_slice(new_ids);
    Ok((hidden, logits))
}

/// One batched teacher-forced pass over candidate continuations that share
/// the cached prefix. For each row of length l, returns the l-1 log
/// probabilities of tokens 2..=l; the first token's probability comes from
/// the logits the caller already holds. The cache is read, never written.
pub fn verify_logprobs(
    model: &BaseModel,
    state: &DecodeState,
    rows: &[Vec<TokenId>],
) -> Result<Vec<Vec<f32>>, ModelError> {
    let cfg = &model.config;
    let (dh, heads, d) = (cfg.d_head(), cfg.n_heads, cfg.d_model);
    let scale = 1.0 / (dh as f32).sqrt();
    let t0 = state.len();

    let mut spans = Vec::with_capacity(rows.len());
    let mut fed: Vec<TokenId> = Vec::new();
    let mut positions: Vec<usize> = Vec::new();
    for row in rows {
        if row.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if t0 + row.len() > cfg.context_len {
            return Err(ModelError::ContextOverflow(t0 + row.len(), cfg.context_len));
        }
        let l = row.len() - 1;
        spans.push((fed.len(), l));
        for (j, &id) in row[..l].iter().enumerate() {
            fed.push(id);
            positions.push(t0 + j);
        }
    }
    if fed.is_empty() {
        return Ok(vec![Vec::new(); rows.len()]);
    }

    let mut x = Array2::zeros((fed.len(), d));
    for (i, (&id, &p)) in fed.iter().zip(&positions).enumerate() {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange(id, cfg.vocab_size));
        }
        let row = &model.tok_emb.row(id as usize) + &model.pos_emb.row(p);
        x.row_mut(i).assign(&row);
    }

    for (l, b) in model.blocks.iter().enumerate() {
        let xn1 = ln_forward(&x, &b.ln1);
        let q = xn1.dot(&b.wq);
        let k = xn1.dot(&b.wk);
        let v = xn1.dot(&b.wv);
        let kc = &state.k[l];
        let vc = &state.v[l];
        let qs = q.as_slice().unwrap();
        let ks = k.as_slice().unwrap();
        let vs = v.as_slice().unwrap();
        let mut att_out = Array2::zeros((x.nrows(), d));
        for &(start, len) in &spans {
            for j in 0..len {
                let m = start + j; // this query's row in the batch
                for h in 0..heads {
                    let c0 = h * dh;
                    let mut scores = Vec::with_capacity(t0 + j + 1);
                    for p in 0..t0 {
                        let mut dot = 0.0f32;
                        for c in 0..dh {
                            dot += qs[m * d + c0 + c] * kc[p * d + c0 + c];
                        }
                        scores.push(dot * scale);
                    }
                    for p in 0..=j {
                        let mp = start + p;
                        let mut dot = 0.0f32;
                        for c in 0..dh {
                            dot += qs[m * d + c0 + c] * ks[mp * d + c0 + c];
                        }
                        scores.push(dot * scale);
                    }
                    crate::math::softmax(&mut scores);
                    for (p, &a) in scores[..t0].iter().enumerate() {
                        for c in 0..dh {
                            att_out[[m, c0 + c]] += a * vc[p * d + c0 + c];
                        }
                    }
                    for (p, &a) in scores[t0..].iter().enumerate() {
                        let mp = start + p;
                        for c in 0..dh {
                            att_out[[m, c0 + c]] += a * vs[mp * d + c0 + c];
                        }
                    }
                }
            }
        }
        let y = att_out.dot(&b.wo);
        x += &y;
        let xn2 = ln_forward(&x, &b.ln2);
        let f2 = xn2.dot(&b.w_fc).mapv(crate::math::gelu).dot(&b.w_proj);
        x += &f2;
    }
    let hidden = ln_forward(&x, &model.ln_f);
    let logits = hidden.dot(&model.w_out);

    let mut out = Vec::with_capacity(rows.len());
    for (r, &(start, len)) in spans.iter().enumerate() {
        let mut lps = Vec::with_capacity(len);
        for j in 0..len {
            let target = rows[r][j + 1] as usize;
            lps.push(log_softmax_at(logits.row(start + j).as_slice().unwrap(), target));
        }
        out.push(lps);
    }
    Ok(out)
}

/// Log probability of each continuation token given the prefix and the
/// preceding continuation tokens, from one teacher-forced pass.
pub fn score_continuation(
    model: &BaseModel,
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<f32>, ModelError> {
    if prefix.is_empty() || continuation.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut ids = prefix.to_vec();
    ids.extend_from_slice(continuation);
    let (_, logits) = forward_full(model, &ids)?;
    let mut out = Vec::with_capacity(continuation.len());
    for (j, &target) in continuation.iter().enumerate() {
        let p = prefix.len() - 1 + j;
        out.push(log_softmax_at(logits.row(p).as_slice().unwrap(), target as usize));
    }
    Ok(out)
}

/// The base logits for one hidden-state row, identical to slicing the
/// logits returned by the forward passes' final matmul on that row.
pub fn base_logits(model: &BaseModel, hidden: &ndarray::Array1<f32>) -> ndarray::Array1<f32> {
    hidden.dot(&model.w_out)
}
