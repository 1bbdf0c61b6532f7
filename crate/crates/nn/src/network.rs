//! Layer graphs with explicit wiring, so skip connections are expressible.
//!
//! Activations are numbered: `0` is the network input and node `i` produces
//! activation `i + 1`. Each node consumes earlier activations only, so node
//! order is a valid evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layer::{dropout_forward, Layer, LayerSpec, Param};
use crate::ops::{self, BatchNormCache};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub layer: Layer,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Argmax(Vec<u32>),
    BatchNorm(BatchNormCache),
    Dropout(Vec<f32>),
}

/// Everything a forward pass records for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Tensor>,
    caches: Vec<Cache>,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("tape holds at least the input")
    }

    pub fn activation(&self, index: usize) -> &Tensor {
        &self.acts[index]
    }
}

/// Builds a [`Network`] node by node.
pub struct NetworkBuilder {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl NetworkBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Index of the most recent activation (0 before any node is added).
    pub fn last(&self) -> usize {
        self.nodes.len()
    }

    /// Adds a node reading from the given activations; returns its output index.
    pub fn add(&mut self, spec: LayerSpec, inputs: &[usize]) -> Result<usize> {
        if inputs.len() != spec.arity() {
            return Err(NnError::InvalidArgument(format!(
                "{} takes {} input(s), got {}",
                spec.name(),
                spec.arity(),
                inputs.len()
            )));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i > self.nodes.len()) {
            return Err(NnError::InvalidArgument(format!(
                "activation {bad} does not exist yet"
            )));
        }
        let layer = Layer::init(spec, &mut self.rng)?;
        self.nodes.push(Node {
            layer,
            inputs: inputs.to_vec(),
        });
        Ok(self.nodes.len())
    }

    /// Adds a node fed by the previous activation.
    pub fn then(&mut self, spec: LayerSpec) -> Result<usize> {
        let prev = self.last();
        self.add(spec, &[prev])
    }

    pub fn build(self) -> Network {
        Network { nodes: self.nodes }
    }
}

impl Network {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.nodes.iter().map(|n| &n.layer)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.nodes.iter_mut().map(|n| &mut n.layer)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    pub fn count_kind(&self, pred: impl Fn(&LayerSpec) -> bool) -> usize {
        self.layers().filter(|l| pred(&l.spec)).count()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.nodes
            .iter_mut()
            .flat_map(|n| n.layer.params.iter_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.nodes
            .iter()
            .flat_map(|n| n.layer.params.iter())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// The last node whose spec carries a bias (the output layer of a
    /// classifier or segmenter).
    pub fn output_bias_mut(&mut self) -> Option<&mut Tensor> {
        self.nodes
            .iter_mut()
            .rev()
            .find_map(|n| match n.layer.spec {
                LayerSpec::Conv3x3Same { .. } | LayerSpec::Dense { .. } => {
                    Some(&mut n.layer.params[1].value)
                }
                _ => None,
            })
    }

    /// Inference pass: batch norm uses running statistics, dropout is
    /// identity. Read-only, so safe to share across threads.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.nodes.len() + 1);
        acts.push(input.clone());
        for node in &self.nodes {
            let out = {
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &acts[i]).collect();
                eval_node(&node.layer, &ins)?
            };
            acts.push(out);
        }
        Ok(acts.pop().expect("network input present"))
    }

    /// Forward pass that records a [`Tape`]. In train mode batch norm uses
    /// batch statistics and updates its running averages, and dropout draws
    /// from `rng`.
    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tape> {
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.nodes.len() + 1);
        let mut caches = Vec::with_capacity(self.nodes.len());
        acts.push(input.clone());
        for node in &mut self.nodes {
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &acts[i]).collect();
            let (out, cache) = forward_node(&mut node.layer, &ins, mode, rng)?;
            acts.push(out);
            caches.push(cache);
        }
        Ok(Tape { acts, caches })
    }

    /// Backpropagates `grad_output` (gradient of the loss w.r.t. the network
    /// output), accumulating into every parameter's `grad`. Returns the
    /// gradient w.r.t. the network input.
    pub fn backward(&mut self, tape: &Tape, grad_output: Tensor) -> Result<Tensor> {
        let last = self.nodes.len();
        self.backward_from(tape, last, grad_output)
    }

    /// Like [`Network::backward`] but seeded at activation `start`; nodes
    /// after it are skipped. Used to feed a loss gradient taken w.r.t. an
    /// intermediate activation (e.g. sigmoid logits).
    pub fn backward_from(&mut self, tape: &Tape, start: usize, grad: Tensor) -> Result<Tensor> {
        if start > self.nodes.len() {
            return Err(NnError::InvalidArgument(format!(
                "activation {start} out of range"
            )));
        }
        grad.expect_shape(tape.acts[start].shape())?;
        let mut grads: Vec<Option<Tensor>> = vec![None; tape.acts.len()];
        grads[start] = Some(grad);
        for idx in (0..start).rev() {
            let Some(g_out) = grads[idx + 1].take() else {
                continue;
            };
            let node = &mut self.nodes[idx];
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &tape.acts[i]).collect();
            let in_grads = backward_node(
                &mut node.layer,
                &ins,
                &tape.acts[idx + 1],
                &tape.caches[idx],
                &g_out,
            )?;
            for (&i, g) in node.inputs.iter().zip(in_grads) {
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(tape.acts[0].shape())))
    }
}

fn eval_node(layer: &Layer, ins: &[&Tensor]) -> Result<Tensor> {
    let x = ins[0];
    match &layer.spec {
        LayerSpec::Conv3x3Same { .. } => {
            ops::conv3x3_forward(x, &layer.params[0].value, &layer.params[1].value)
        }
        LayerSpec::Dense { .. } => {
            ops::dense_forward(x, &layer.params[0].value, &layer.params[1].value)
        }
        LayerSpec::BatchNorm { epsilon, .. } => {
            check_channels(x, layer.params[0].value.len())?;
            let (y, _) = ops::batchnorm_apply(
                x,
                layer.state[0].data(),
                layer.state[1].data(),
                &layer.params[0].value,
                &layer.params[1].value,
                *epsilon,
                false,
            )?;
            Ok(y)
        }
        LayerSpec::ReLU => Ok(ops::relu_forward(x)),
        LayerSpec::Sigmoid => Ok(ops::sigmoid_forward(x)),
        LayerSpec::MaxPool2 => Ok(ops::maxpool2_forward(x)?.0),
        LayerSpec::UpSample2 => ops::upsample2_forward(x),
        LayerSpec::Concat => ops::concat_forward(ins[0], ins[1]),
        LayerSpec::Flatten => flatten(x),
        LayerSpec::Dropout { .. } => Ok(x.clone()),
    }
}

fn check_channels(x: &Tensor, c: usize) -> Result<()> {
    if x.ndim() < 2 || x.shape()[1] != c {
        return Err(NnError::Shape(format!(
            "batchnorm over {c} channels got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let n = *x
        .shape()
        .first()
        .ok_or_else(|| NnError::Shape("flatten of a rank-0 tensor".into()))?;
    x.clone().reshape(&[n, x.per_sample()])
}

fn forward_node(
    layer: &mut Layer,
    ins: &[&Tensor],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Cache)> {
    let x = ins[0];
    match (&layer.spec, mode) {
        (
            LayerSpec::BatchNorm {
                epsilon, momentum, ..
            },
            Mode::Train,
        ) => {
            check_channels(x, layer.params[0].value.len())?;
            let (mean, var) = ops::channel_stats(x)?;
            let (y, cache) = ops::batchnorm_apply(
                x,
                &mean,
                &var,
                &layer.params[0].value,
                &layer.params[1].value,
                *epsilon,
                true,
            )?;
            let m = *momentum;
            for (r, b) in layer.state[0].data_mut().iter_mut().zip(&mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, b) in layer.state[1].data_mut().iter_mut().zip(&var) {
                *r = m * *r + (1.0 - m) * b;
            }
            Ok((y, Cache::BatchNorm(cache)))
        }
        (LayerSpec::BatchNorm { epsilon, .. }, Mode::Eval) => {
            check_channels(x, layer.params[0].value.len())?;
            let (y, cache) = ops::batchnorm_apply(
                x,
                layer.state[0].data(),
                layer.state[1].data(),
                &layer.params[0].value,
                &layer.params[1].value,
                *epsilon,
                false,
            )?;
            Ok((y, Cache::BatchNorm(cache)))
        }
        (LayerSpec::MaxPool2, _) => {
            let (y, arg) = ops::maxpool2_forward(x)?;
            Ok((y, Cache::Argmax(arg)))
        }
        (LayerSpec::Dropout { rate }, Mode::Train) => {
            let (y, scale) = dropout_forward(x, *rate, rng);
            Ok((y, Cache::Dropout(scale)))
        }
        _ => Ok((eval_node(layer, ins)?, Cache::None)),
    }
}

fn backward_node(
    layer: &mut Layer,
    ins: &[&Tensor],
    out: &Tensor,
    cache: &Cache,
    g: &Tensor,
) -> Result<Vec<Tensor>> {
    let x = ins[0];
    Ok(match (&layer.spec, cache) {
        (LayerSpec::Conv3x3Same { .. }, _) => {
            let (gi, gw, gb) = ops::conv3x3_backward(x, &layer.params[0].value, g)?;
            layer.params[0].grad.add_assign(&gw)?;
            layer.params[1].grad.add_assign(&gb)?;
            vec![gi]
        }
        (LayerSpec::Dense { .. }, _) => {
            let (gi, gw, gb) = ops::dense_backward(x, &layer.params[0].value, g)?;
            layer.params[0].grad.add_assign(&gw)?;
            layer.params[1].grad.add_assign(&gb)?;
            vec![gi]
        }
        (LayerSpec::BatchNorm { .. }, Cache::BatchNorm(bn)) => {
            let (gi, gg, gb) = ops::batchnorm_backward(bn, &layer.params[0].value, g)?;
            layer.params[0].grad.add_assign(&gg)?;
            layer.params[1].grad.add_assign(&gb)?;
            vec![gi]
        }
        (LayerSpec::MaxPool2, Cache::Argmax(arg)) => {
            vec![ops::maxpool2_backward(x.shape(), arg, g)]
        }
        (LayerSpec::Dropout { .. }, Cache::Dropout(scale)) => {
            let data = g.data().iter().zip(scale).map(|(a, s)| a * s).collect();
            vec![Tensor::new(g.shape().to_vec(), data)?]
        }
        (LayerSpec::Dropout { .. }, _) => vec![g.clone()],
        (LayerSpec::ReLU, _) => vec![ops::relu_backward(x, g)],
        (LayerSpec::Sigmoid, _) => vec![ops::sigmoid_backward(out, g)],
        (LayerSpec::UpSample2, _) => vec![ops::upsample2_backward(x.shape(), g)],
        (LayerSpec::Flatten, _) => vec![g.clone().reshape(x.shape())?],
        (LayerSpec::Concat, _) => {
            let (ga, gb) = ops::concat_backward(ins[0].shape(), ins[1].shape(), g);
            vec![ga, gb]
        }
        (spec, _) => {
            return Err(NnError::InvalidArgument(format!(
                "missing forward cache for {}",
                spec.name()
            )))
        }
    })
}
