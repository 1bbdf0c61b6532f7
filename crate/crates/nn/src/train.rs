//! Mini-batch training with Adam, BCE and the per-epoch exponential decay.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layer::LayerSpec;
use crate::loss::{bce_grad, bce_logit_grad, bce_loss};
use crate::network::{Mode, Network};
use crate::optim::{adam_step, lr_at_epoch, steps_per_epoch, AdamState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f32,
    pub train_set_size: usize,
    pub test_set_size: usize,
    pub rng_seed: u64,
}

impl TrainConfig {
    /// Batch 32, 20 epochs, initial learning rate 0.1.
    pub fn new(train_set_size: usize, test_set_size: usize) -> Self {
        Self {
            batch_size: 32,
            epochs: 20,
            initial_lr: 0.1,
            train_set_size,
            test_set_size,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.train_set_size == 0 {
            return Err(NnError::InvalidArgument(
                "batch size and training set size must be positive".into(),
            ));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(NnError::InvalidArgument(format!(
                "initial learning rate {} must be positive",
                self.initial_lr
            )));
        }
        Ok(())
    }

    pub fn train_steps(&self) -> Result<usize> {
        steps_per_epoch(self.train_set_size, self.batch_size)
    }

    pub fn test_steps(&self) -> Result<usize> {
        steps_per_epoch(self.test_set_size, self.batch_size)
    }

    pub fn lr(&self, epoch: usize) -> f32 {
        lr_at_epoch(self.initial_lr, epoch)
    }
}

/// Source of training batches. `batch` may draw from `rng` (augmentation).
pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)>;
}

/// In-memory samples; each input and target lacks the batch axis.
#[derive(Debug, Clone)]
pub struct TensorDataset {
    inputs: Vec<Tensor>,
    targets: Vec<Tensor>,
}

impl TensorDataset {
    pub fn new(inputs: Vec<Tensor>, targets: Vec<Tensor>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(NnError::InvalidArgument(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }
}

impl Dataset for TensorDataset {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn batch(&self, indices: &[usize], _rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
        let xs: Vec<Tensor> = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let ts: Vec<Tensor> = indices.iter().map(|&i| self.targets[i].clone()).collect();
        Ok((Tensor::stack(&xs)?, Tensor::stack(&ts)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f32,
    pub loss: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    /// Mean training loss of each epoch, in epoch order.
    pub fn epoch_losses(&self) -> Vec<f32> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss as f64;
            out[r.epoch].1 += 1;
        }
        out.into_iter()
            .map(|(s, n)| (s / n.max(1) as f64) as f32)
            .collect()
    }

    /// `epoch,step,lr,loss` CSV with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,step,lr,loss")?;
        for r in &self.records {
            writeln!(w, "{},{},{:e},{}", r.epoch, r.step, r.lr, r.loss)?;
        }
        Ok(())
    }
}

fn ends_in_sigmoid(net: &Network) -> bool {
    net.nodes()
        .last()
        .is_some_and(|n| n.layer.spec == LayerSpec::Sigmoid)
}

/// Loss and parameter gradients for one batch (gradients are overwritten).
/// Returns the batch loss.
pub fn compute_gradients(
    net: &mut Network,
    input: &Tensor,
    target: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<f32> {
    net.zero_grad();
    let tape = net.forward(input, Mode::Train, rng)?;
    let out = tape.output();
    let loss = bce_loss(out, target)?;
    if ends_in_sigmoid(net) {
        let g = bce_logit_grad(out, target)?;
        let logits = net.len() - 1;
        net.backward_from(&tape, logits, g)?;
    } else {
        let g = bce_grad(out, target)?;
        net.backward(&tape, g)?;
    }
    Ok(loss)
}

/// Runs `epochs x ceil(n / batch)` Adam steps, shuffling sample order each
/// epoch. Everything random (shuffles, dropout, whatever `data.batch` draws)
/// comes from one generator seeded with `cfg.rng_seed`.
pub fn train(net: &mut Network, data: &dyn Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.len() != cfg.train_set_size {
        return Err(NnError::InvalidArgument(format!(
            "config expects {} training samples, dataset has {}",
            cfg.train_set_size,
            data.len()
        )));
    }
    let steps = cfg.train_steps()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut adam = AdamState::new(net.params().iter().map(|p| p.value.shape()));
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        order.shuffle(&mut rng);
        for step in 0..steps {
            let lo = step * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(order.len());
            let (x, t) = data.batch(&order[lo..hi], &mut rng)?;
            let loss = compute_gradients(net, &x, &t, &mut rng)?;
            if !loss.is_finite() {
                return Err(NnError::Divergence { epoch, step, loss });
            }
            adam_step(&mut net.params_mut(), &mut adam, lr)?;
            log.records.push(StepRecord {
                epoch,
                step,
                lr,
                loss,
            });
        }
    }
    Ok(log)
}

/// Mean eval-mode BCE over a dataset.
pub fn evaluate_loss(net: &Network, data: &dyn Dataset, batch_size: usize) -> Result<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0f64;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, t) = data.batch(chunk, &mut rng)?;
        let p = net.predict(&x)?;
        total += bce_loss(&p, &t)? as f64 * chunk.len() as f64;
    }
    Ok((total / data.len().max(1) as f64) as f32)
}
