//! A small CPU neural-network engine: `f32` tensors, a layer graph with
//! hand-written backward passes, binary cross-entropy, Adam with an
//! exponentially decaying learning rate, a finite-difference gradient
//! checker and a versioned binary weight format.
//!
//! Training is deterministic: every random draw comes from a seeded
//! ChaCha generator and batch reductions run in a fixed order.

pub mod error;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{NnError, Result};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, ProbeLoss};
pub use layer::{Layer, LayerSpec, Param};
pub use loss::{bce_grad, bce_loss};
pub use network::{Mode, Network, NetworkBuilder, Tape};
pub use optim::{adam_step, lr_at_epoch, steps_per_epoch, AdamState};
pub use tensor::Tensor;
pub use train::{train, Dataset, StepRecord, TensorDataset, TrainConfig, TrainLog};
pub use weights::{load_weights, save_weights};
