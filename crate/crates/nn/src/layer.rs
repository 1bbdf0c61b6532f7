//! Layer descriptions and their parameter state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

/// What a layer computes, with the sizes needed to allocate its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv3x3Same {
        in_channels: usize,
        out_channels: usize,
    },
    BatchNorm {
        channels: usize,
        epsilon: f32,
        momentum: f32,
    },
    ReLU,
    MaxPool2,
    Dense {
        inputs: usize,
        units: usize,
    },
    Dropout {
        rate: f32,
    },
    Sigmoid,
    Flatten,
    UpSample2,
    Concat,
}

impl LayerSpec {
    pub fn batchnorm(channels: usize) -> Self {
        LayerSpec::BatchNorm {
            channels,
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    /// Stable tag used by the weight file format.
    pub fn kind_tag(&self) -> u8 {
        match self {
            LayerSpec::Conv3x3Same { .. } => 1,
            LayerSpec::BatchNorm { .. } => 2,
            LayerSpec::ReLU => 3,
            LayerSpec::MaxPool2 => 4,
            LayerSpec::Dense { .. } => 5,
            LayerSpec::Dropout { .. } => 6,
            LayerSpec::Sigmoid => 7,
            LayerSpec::Flatten => 8,
            LayerSpec::UpSample2 => 9,
            LayerSpec::Concat => 10,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3Same { .. } => "conv3x3",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
            LayerSpec::UpSample2 => "upsample2",
            LayerSpec::Concat => "concat",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            LayerSpec::Concat => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidArgument(msg));
        match *self {
            LayerSpec::Conv3x3Same {
                in_channels,
                out_channels,
            } if in_channels == 0 || out_channels == 0 => bad(format!(
                "conv3x3 with {in_channels}->{out_channels} channels"
            )),
            LayerSpec::BatchNorm { channels: 0, .. } => bad("batchnorm with zero channels".into()),
            LayerSpec::BatchNorm { epsilon, .. } if epsilon <= 0.0 => {
                bad(format!("batchnorm epsilon {epsilon}"))
            }
            LayerSpec::Dense { inputs, units } if inputs == 0 || units == 0 => {
                bad(format!("dense {inputs}->{units}"))
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                bad(format!("dropout rate {rate} outside [0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}

/// A layer instance: its spec, trainable parameters and non-trainable state
/// (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Param>,
    pub state: Vec<Tensor>,
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt() as f32;
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..=limit);
    }
    t
}

impl Layer {
    /// He-uniform weights, zero biases, unit/zero batch-norm affine terms.
    pub fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let (params, state) = match spec {
            LayerSpec::Conv3x3Same {
                in_channels,
                out_channels,
            } => (
                vec![
                    Param::new(he_uniform(
                        &[out_channels, in_channels, 3, 3],
                        in_channels * 9,
                        rng,
                    )),
                    Param::new(Tensor::zeros(&[out_channels])),
                ],
                vec![],
            ),
            LayerSpec::Dense { inputs, units } => (
                vec![
                    Param::new(he_uniform(&[inputs, units], inputs, rng)),
                    Param::new(Tensor::zeros(&[units])),
                ],
                vec![],
            ),
            LayerSpec::BatchNorm { channels, .. } => (
                vec![
                    Param::new(Tensor::full(&[channels], 1.0)),
                    Param::new(Tensor::zeros(&[channels])),
                ],
                vec![Tensor::zeros(&[channels]), Tensor::full(&[channels], 1.0)],
            ),
            _ => (vec![], vec![]),
        };
        Ok(Self {
            spec,
            params,
            state,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Every tensor that is persisted: parameters first, then state.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params
            .iter()
            .map(|p| &p.value)
            .chain(self.state.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params
            .iter_mut()
            .map(|p| &mut p.value)
            .chain(self.state.iter_mut())
    }
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// `1/(1-rate)`. Returns the output and the per-element multiplier.
pub fn dropout_forward(input: &Tensor, rate: f32, rng: &mut ChaCha8Rng) -> (Tensor, Vec<f32>) {
    if rate == 0.0 {
        return (input.clone(), vec![1.0; input.len()]);
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f32> = (0..input.len())
        .map(|_| {
            if rng.random::<f32>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&scale)
        .map(|(x, s)| x * s)
        .collect();
    (
        Tensor::new(input.shape().to_vec(), data).expect("dropout shape"),
        scale,
    )
}
