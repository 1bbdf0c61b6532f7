//! Adam and the exponential learning-rate schedule.

use crate::error::{NnError, Result};
use crate::layer::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments mirroring the given parameter shapes.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn for_params(params: &[&mut Param]) -> Self {
        Self::new(params.iter().map(|p| p.value.shape()))
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }
}

/// One bias-corrected Adam update of every parameter from its `grad`.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, lr: f32) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(NnError::Shape(format!(
            "adam state tracks {} tensors, got {}",
            state.first.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.first) {
        p.value.expect_shape(m.shape())?;
        p.grad.expect_shape(m.shape())?;
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - (b1 as f64).powi(state.step as i32);
    let c2 = 1.0 - (b2 as f64).powi(state.step as i32);
    let c1 = c1 as f32;
    let c2 = c2 as f32;
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let grad = p.grad.data().to_vec();
        for (((w, mi), vi), g) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(grad)
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `initial_lr * e^(-epoch)`.
pub fn lr_at_epoch(initial_lr: f32, epoch: usize) -> f32 {
    (initial_lr as f64 * (-(epoch as f64)).exp()) as f32
}

/// Number of batches needed to see every sample once: `ceil(set / batch)`.
pub fn steps_per_epoch(set_size: usize, batch_size: usize) -> Result<usize> {
    if set_size == 0 || batch_size == 0 {
        return Err(NnError::InvalidArgument(format!(
            "steps_per_epoch({set_size}, {batch_size})"
        )));
    }
    Ok(set_size.div_ceil(batch_size))
}
