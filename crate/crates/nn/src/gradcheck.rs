//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{bce_grad, PROB_CLAMP};
use crate::network::{Mode, Network};
use crate::tensor::Tensor;

/// Scalar objective the checker differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeLoss {
    /// Binary cross-entropy of the output against the target.
    Bce,
    /// `sum(output * target)`; works for unbounded outputs.
    Weighted,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference half step.
    pub step: f32,
    /// Coordinates sampled per tensor; tensors at most this large are checked exhaustively.
    pub samples_per_tensor: usize,
    /// Denominator floor of the relative error: `|a - n| / max(|a|, |n|, floor)`.
    /// At a 1e-3 step, f32 rounding leaves ~1e-4 of absolute noise in the
    /// central difference, so gradients below the floor are compared absolutely.
    pub floor: f64,
    pub mode: Mode,
    pub loss: ProbeLoss,
    pub check_input: bool,
    pub seed: u64,
    /// Multiplier applied to the analytic gradients before comparison. Only
    /// useful for checking that the checker itself catches wrong gradients.
    pub analytic_scale: f32,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            samples_per_tensor: 64,
            floor: 0.1,
            mode: Mode::Train,
            loss: ProbeLoss::Bce,
            check_input: true,
            seed: 0,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Where the worst disagreement occurred, e.g. `param 3[17]` or `input[5]`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn objective(
    net: &mut Network,
    input: &Tensor,
    target: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tape = net.forward(input, cfg.mode, &mut rng)?;
    let out = tape.output();
    target.expect_shape(out.shape())?;
    let pairs = out.data().iter().zip(target.data());
    Ok(match cfg.loss {
        ProbeLoss::Weighted => pairs.map(|(&o, &t)| o as f64 * t as f64).sum(),
        ProbeLoss::Bce => {
            let n = out.len() as f64;
            pairs
                .map(|(&p, &t)| {
                    let p = (p as f64).clamp(PROB_CLAMP as f64, 1.0 - PROB_CLAMP as f64);
                    let t = t as f64;
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
    })
}

fn coordinates(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, k).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares backprop gradients (parameters and, optionally, the input)
/// against central differences with step `cfg.step`. Works on a clone, so
/// `net` is untouched.
pub fn gradient_check(
    net: &Network,
    input: &Tensor,
    target: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut work = net.clone();
    work.zero_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tape = work.forward(input, cfg.mode, &mut rng)?;
    let seed_grad = match cfg.loss {
        ProbeLoss::Bce => bce_grad(tape.output(), target)?,
        ProbeLoss::Weighted => {
            target.expect_shape(tape.output().shape())?;
            target.clone()
        }
    };
    let input_grad = work.backward(&tape, seed_grad)?;
    let analytic: Vec<Tensor> = work.params().iter().map(|p| p.grad.clone()).collect();

    let h = cfg.step as f64;
    let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let record = |a: f64, n: f64, at: String, report: &mut GradCheckReport| {
        let a = a * cfg.analytic_scale as f64;
        let err = (a - n).abs() / a.abs().max(n.abs()).max(cfg.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = at;
        }
    };

    let mut probe = net.clone();
    for (pi, grad) in analytic.iter().enumerate() {
        for i in coordinates(grad.len(), cfg.samples_per_tensor, &mut pick) {
            let orig = probe.params()[pi].value.data()[i];
            probe.params_mut()[pi].value.data_mut()[i] = orig + cfg.step;
            let up = objective(&mut probe, input, target, cfg)?;
            probe.params_mut()[pi].value.data_mut()[i] = orig - cfg.step;
            let down = objective(&mut probe, input, target, cfg)?;
            probe.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            record(
                grad.data()[i] as f64,
                numeric,
                format!("param {pi}[{i}]"),
                &mut report,
            );
        }
    }

    if cfg.check_input {
        let mut x = input.clone();
        for i in coordinates(x.len(), cfg.samples_per_tensor, &mut pick) {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + cfg.step;
            let up = objective(&mut probe, &x, target, cfg)?;
            x.data_mut()[i] = orig - cfg.step;
            let down = objective(&mut probe, &x, target, cfg)?;
            x.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            record(
                input_grad.data()[i] as f64,
                numeric,
                format!("input[{i}]"),
                &mut report,
            );
        }
    }
    Ok(report)
}
