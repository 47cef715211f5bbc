//! Analytic gradients for the full forward pass.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::ForwardTrace;
use super::{BaseModel, LayerNorm, LN_EPS};
use crate::math::gelu_grad;

#[derive(Debug)]
pub struct BlockGrads {
    pub ln1_gain: Array1<f32>,
    pub ln1_bias: Array1<f32>,
    pub wq: Array2<f32>,
    pub wk: Array2<f32>,
    pub wv: Array2<f32>,
    pub wo: Array2<f32>,
    pub ln2_gain: Array1<f32>,
    pub ln2_bias: Array1<f32>,
    pub w_fc: Array2<f32>,
    pub w_proj: Array2<f32>,
}

#[derive(Debug)]
pub struct BaseGrads {
    pub tok_emb: Array2<f32>,
    pub pos_emb: Array2<f32>,
    pub blocks: Vec<BlockGrads>,
    pub ln_f_gain: Array1<f32>,
    pub ln_f_bias: Array1<f32>,
    pub w_out: Array2<f32>,
}

impl BaseGrads {
    pub fn zeros_like(model: &BaseModel) -> Self {
        let z2 = |a: &Array2<f32>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f32>| Array1::zeros(a.raw_dim());
        Self {
            tok_emb: z2(&model.tok_emb),
            pos_emb: z2(&model.pos_emb),
            blocks: model
                .blocks
                .iter()
                .map(|b| BlockGrads {
                    ln1_gain: z1(&b.ln1.gain),
                    ln1_bias: z1(&b.ln1.bias),
                    wq: z2(&b.wq),
                    wk: z2(&b.wk),
                    wv: z2(&b.wv),
                    wo: z2(&b.wo),
                    ln2_gain: z1(&b.ln2.gain),
                    ln2_bias: z1(&b.ln2.bias),
                    w_fc: z2(&b.w_fc),
                    w_proj: z2(&b.w_proj),
                })
                .collect(),
            ln_f_gain: z1(&model.ln_f.gain),
            ln_f_bias: z1(&model.ln_f.bias),
            w_out: z2(&model.w_out),
        }
    }

    pub fn zero(&mut self) {
        self.visit_mut(&mut |s| s.fill(0.0));
    }

    /// Same canonical order as [`BaseModel::param_slices_mut`].
    pub fn param_slices(&self) -> Vec<&[f32]> {
        let mut v: Vec<&[f32]> = Vec::new();
        v.push(self.tok_emb.as_slice().unwrap());
        v.push(self.pos_emb.as_slice().unwrap());
        for b in &self.blocks {
            v.push(b.ln1_gain.as_slice().unwrap());
            v.push(b.ln1_bias.as_slice().unwrap());
            v.push(b.wq.as_slice().unwrap());
            v.push(b.wk.as_slice().unwrap());
            v.push(b.wv.as_slice().unwrap());
            v.push(b.wo.as_slice().unwrap());
            v.push(b.ln2_gain.as_slice().unwrap());
            v.push(b.ln2_bias.as_slice().unwrap());
            v.push(b.w_fc.as_slice().unwrap());
            v.push(b.w_proj.as_slice().unwrap());
        }
        v.push(self.ln_f_gain.as_slice().unwrap());
        v.push(self.ln_f_bias.as_slice().unwrap());
        v.push(self.w_out.as_slice().unwrap());
        v
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut [f32])) {
        f(self.tok_emb.as_slice_mut().unwrap());
        f(self.pos_emb.as_slice_mut().unwrap());
        for b in self.blocks.iter_mut() {
            f(b.ln1_gain.as_slice_mut().unwrap());
            f(b.ln1_bias.as_slice_mut().unwrap());
            f(b.wq.as_slice_mut().unwrap());
            f(b.wk.as_slice_mut().unwrap());
            f(b.wv.as_slice_mut().unwrap());
            f(b.wo.as_slice_mut().unwrap());
            f(b.ln2_gain.as_slice_mut().unwrap());
            f(b.ln2_bias.as_slice_mut().unwrap());
            f(b.w_fc.as_slice_mut().unwrap());
            f(b.w_proj.as_slice_mut().unwrap());
        }
        f(self.ln_f_gain.as_slice_mut().unwrap());
        f(self.ln_f_bias.as_slice_mut().unwrap());
        f(self.w_out.as_slice_mut().unwrap());
    }
}

/// Backward through layer norm, recomputing the row statistics from the
/// saved input. Accumulates parameter gradients, returns dx.
pub(crate) fn ln_backward(
    x: &Array2<f32>,
    ln: &LayerNorm,
    dy: &Array2<f32>,
    dgain: &mut Array1<f32>,
    dbias: &mut Array1<f32>,
) -> Array2<f32> {
    let d = x.ncols() as f32;
    let mut dx = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let row = x.row(i);
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        let dyr = dy.row(i);
        let mut m1 = 0.0f32; // mean of dxhat
        let mut m2 = 0.0f32; // mean of dxhat * xhat
        for j in 0..x.ncols() {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = dyr[j] * ln.gain[j];
            dgain[j] += dyr[j] * xhat;
            dbias[j] += dyr[j];
            m1 += dxhat;
            m2 += dxhat * xhat;
        }
        m1 /= d;
        m2 /= d;
        let mut dxr = dx.row_mut(i);
        for j in 0..x.ncols() {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = dyr[j] * ln.gain[j];
            dxr[j] = rstd * (dxhat - m1 - xhat * m2);
        }
    }
    dx
}

/// Accumulates gradients of a scalar loss with the given dlogits into
/// `grads`. The trace must come from `forward_full` on the same model.
pub fn backward(
    model: &BaseModel,
    trace: &ForwardTrace,
    dlogits: &Array2<f32>,
    grads: &mut BaseGrads,
) {
    let cfg = &model.config;
    let (dh, heads) = (cfg.d_head(), cfg.n_heads);
    let scale = 1.0 / (dh as f32).sqrt();
    let t = trace.ids.len();

    grads.w_out += &trace.hidden.t().dot(dlogits);
    let dhidden = dlogits.dot(&model.w_out.t());
    let mut dx = ln_backward(
        &trace.h_pre,
        &model.ln_f,
        &dhidden,
        &mut grads.ln_f_gain,
        &mut grads.ln_f_bias,
    );

    for (l, b) in model.blocks.iter().enumerate().rev() {
        let tr = &trace.layers[l];
        let g = &mut grads.blocks[l];

        // x_out = x_mid + gelu(xn2 w_fc) w_proj
        let df2 = &dx;
        g.w_proj += &tr.g.t().dot(df2);
        let dg = df2.dot(&b.w_proj.t());
        let df1 = &dg * &tr.f1.mapv(gelu_grad);
        g.w_fc += &tr.xn2.t().dot(&df1);
        let dxn2 = df1.dot(&b.w_fc.t());
        let dx_mid = &dx + &ln_backward(&tr.x_mid, &b.ln2, &dxn2, &mut g.ln2_gain, &mut g.ln2_bias);

        // x_mid = x_in + att_out wo
        let dy = &dx_mid;
        g.wo += &tr.att_out.t().dot(dy);
        let datt_out = dy.dot(&b.wo.t());

        let mut dq = Array2::zeros((t, cfg.d_model));
        let mut dk = Array2::zeros((t, cfg.d_model));
        let mut dv = Array2::zeros((t, cfg.d_model));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = trace.layers[l].att.index_axis(Axis(0), h);
            let do_h = datt_out.slice(cols);
            let vh = tr.v.slice(cols);
            let qh = tr.q.slice(cols);
            let kh = tr.k.slice(cols);

            let da = do_h.dot(&vh.t());
            dv.slice_mut(cols).assign(&a.t().dot(&do_h));
            // softmax rows: ds = a * (da - rowsum(da * a))
            let mut ds = Array2::zeros((t, t));
            for i in 0..t {
                let dot: f32 = da.row(i).iter().zip(a.row(i)).map(|(x, y)| x * y).sum();
                for j in 0..=i {
                    ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot);
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&kh).mapv(|x| x * scale));
            dk.slice_mut(cols).assign(&ds.t().dot(&qh).mapv(|x| x * scale));
        }
        g.wq += &tr.xn1.t().dot(&dq);
        g.wk += &tr.xn1.t().dot(&dk);
        g.wv += &tr.xn1.t().dot(&dv);
        let dxn1 = dq.dot(&b.wq.t()) + dk.dot(&b.wk.t()) + dv.dot(&b.wv.t());
        dx = &dx_mid + &ln_backward(&tr.x_in, &b.ln1, &dxn1, &mut g.ln1_gain, &mut g.ln1_bias);
    }

    for (i, &id) in trace.ids.iter().enumerate() {
        let drow = dx.row(i);
        let mut tok = grads.tok_emb.row_mut(id as usize);
        tok += &drow;
        let mut pos = grads.pos_emb.row_mut(i);
        pos += &drow;
    }
}

/// Mean cross-entropy over all positions, with dlogits for the backward
/// pass. `targets[i]` is the label for logits row i.
pub fn ce_loss_and_dlogits(
    logits: &Array2<f32>,
    targets: &[crate::tokenizer::TokenId],
) -> (f32, Array2<f32>) {
    assert_eq!(logits.nrows(), targets.len());
    let n = targets.len() as f32;
    let mut dlogits = logits.clone();
    let mut loss = 0.0f64;
    for (i, &target) in targets.iter().enumerate() {
        let row = dlogits.row_mut(i).into_slice().unwrap();
        crate::math::log_softmax(row);
        loss -= f64::from(row[target as usize]);
        for v in row.iter_mut() {
            *v = v.exp() / n;
        }
        row[target as usize] -= 1.0 / n;
    }
    ((loss / f64::from(n)) as f32, dlogits)
}
