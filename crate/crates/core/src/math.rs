//! Small numeric helpers shared by the model, head, and decoder.

/// In-place stable softmax.
pub fn softmax(xs: &mut [f32]) {
    let max = xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// In-place stable log-softmax.
pub fn log_softmax(xs: &mut [f32]) {
    let max = xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let sum: f32 = xs.iter().map(|x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

/// log softmax evaluated at one index without materializing the whole row.
pub fn log_softmax_at(xs: &[f32], idx: usize) -> f32 {
    let max = xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let sum: f32 = xs.iter().map(|x| (x - max).exp()).sum();
    xs[idx] - (max + sum.ln())
}

/// tanh-form gelu, the variant whose derivative we backpropagate.
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_56; // sqrt(2/pi)
    const A: f32 = 0.044_715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    const C: f32 = 0.797_884_56;
    const A: f32 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Index of the maximum value; ties break toward the lower index.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let mut xs = vec![1.0, 2.0, 3.0, -4.0];
        softmax(&mut xs);
        let sum: f32 = xs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let xs = vec![0.3f32, -1.2, 2.0, 0.0];
        let mut p = xs.clone();
        softmax(&mut p);
        let mut lp = xs.clone();
        log_softmax(&mut lp);
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-6);
        }
        assert!((log_softmax_at(&xs, 2) - lp[2]).abs() < 1e-7);
    }

    #[test]
    fn activation_grads_match_finite_differences() {
        let eps = 1e-3f64;
        for &x in &[-2.0f32, -0.5, 0.0, 0.3, 1.7] {
            let fd_gelu = (f64::from(gelu(x + eps as f32)) - f64::from(gelu(x - eps as f32)))
                / (2.0 * eps);
            assert!((fd_gelu - f64::from(gelu_grad(x))).abs() < 1e-3);
            let fd_silu = (f64::from(silu(x + eps as f32)) - f64::from(silu(x - eps as f32)))
                / (2.0 * eps);
            assert!((fd_silu - f64::from(silu_grad(x))).abs() < 1e-3);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 1.0, 1.0, 0.2]), 1);
    }
}
