//! Binary cross-entropy.

use crate::error::Result;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f32 = 1e-7;

#[inline]
fn clamp_prob(p: f32) -> f32 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean over elements of `-[t ln p + (1 - t) ln(1 - p)]`.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f32> {
    target.expect_shape(pred.shape())?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p) as f64;
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok((sum / pred.len() as f64) as f32)
}

/// d(bce)/d(pred), evaluated at the clamped prediction.
pub fn bce_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    target.expect_shape(pred.shape())?;
    let n = pred.len() as f32;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            (p - t) / (p * (1.0 - p)) / n
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// Gradient of bce(sigmoid(z)) w.r.t. the logits `z`, given `prob = sigmoid(z)`:
/// `(prob - t) / n`. Stays informative when the sigmoid saturates.
pub fn bce_logit_grad(prob: &Tensor, target: &Tensor) -> Result<Tensor> {
    target.expect_shape(prob.shape())?;
    let n = prob.len() as f32;
    let data = prob
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) / n)
        .collect();
    Tensor::new(prob.shape().to_vec(), data)
}
