//! Slice classifier: stacked conv/batch-norm/ReLU/max-pool stages, a dense
//! head with dropout, and a sigmoid giving P(non-COVID).
//!
//! With conv widths `k_1..k_L`, input side `s` and dense width `u`, the
//! parameter count is
//!
//! ```text
//! sum_i (9 k_{i-1} k_i + k_i + 2 k_i)      with k_0 = 1
//! + (k_L (s / 2^L)^2 + 1) u + 2u            dense + batch norm
//! + u + 1                                   output unit
//! ```
//!
//! which is 6,521,185 for the default 224x224 model.

use std::path::Path;

use covct_nn::{train, Dataset, LayerSpec, Network, NetworkBuilder, Tensor, TrainConfig, TrainLog};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{join_list, sidecar_path, Config};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::pipeline::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct ClfConfig {
    pub conv_channels: Vec<usize>,
    pub dense_units: usize,
    pub dropout: f32,
    pub input_size: usize,
    pub batch_size: usize,
    pub initial_lr: f32,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for ClfConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64, 128],
            dense_units: 256,
            dropout: 0.10,
            input_size: 224,
            batch_size: 128,
            initial_lr: 0.1,
            epochs: 20,
            rng_seed: 0,
        }
    }
}

impl ClfConfig {
    /// The five-stage variant (`16, 32, 64, 128, 256`).
    pub fn five_layer() -> Self {
        Self {
            conv_channels: vec![16, 32, 64, 128, 256],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad(format!(
                "conv_channels {:?} must be non-empty and positive",
                self.conv_channels
            ));
        }
        if self.conv_channels.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!(
                "conv_channels {:?} must be ascending",
                self.conv_channels
            ));
        }
        let stride = 1usize << self.conv_channels.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return bad(format!(
                "input_size {} is not a positive multiple of {stride}",
                self.input_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.dense_units == 0 || self.batch_size == 0 {
            return bad("dense_units and batch_size must be positive".into());
        }
        if self.initial_lr.is_nan() || self.initial_lr <= 0.0 {
            return bad(format!("initial_lr {} must be positive", self.initial_lr));
        }
        Ok(())
    }

    pub fn train_config(&self, n_samples: usize) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            initial_lr: self.initial_lr,
            train_set_size: n_samples,
            test_set_size: n_samples.max(1),
            rng_seed: self.rng_seed,
        }
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("model", "classifier");
        c.set("conv_channels", join_list(&self.conv_channels));
        c.set("dense_units", self.dense_units);
        c.set("dropout", self.dropout);
        c.set("input_size", self.input_size);
        c.set("batch_size", self.batch_size);
        c.set("initial_lr", self.initial_lr);
        c.set("epochs", self.epochs);
        c.set("rng_seed", self.rng_seed);
        c
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        if c.get("model").is_some_and(|m| m != "classifier") {
            return Err(Error::Parse(format!(
                "expected a classifier model, found {:?}",
                c.get("model")
            )));
        }
        let d = Self::default();
        let cfg = Self {
            conv_channels: c.parsed_list("conv_channels")?.unwrap_or(d.conv_channels),
            dense_units: c.parsed_or("dense_units", d.dense_units)?,
            dropout: c.parsed_or("dropout", d.dropout)?,
            input_size: c.parsed_or("input_size", d.input_size)?,
            batch_size: c.parsed_or("batch_size", d.batch_size)?,
            initial_lr: c.parsed_or("initial_lr", d.initial_lr)?,
            epochs: c.parsed_or("epochs", d.epochs)?,
            rng_seed: c.parsed_or("rng_seed", d.rng_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Builds the network with weights drawn from `cfg.rng_seed`.
pub fn build_classifier(cfg: &ClfConfig) -> Result<Network> {
    cfg.validate()?;
    let mut b = NetworkBuilder::new(cfg.rng_seed);
    let mut c_in = 1;
    for &c in &cfg.conv_channels {
        b.then(LayerSpec::Conv3x3Same {
            in_channels: c_in,
            out_channels: c,
        })?;
        b.then(LayerSpec::batchnorm(c))?;
        b.then(LayerSpec::ReLU)?;
        b.then(LayerSpec::MaxPool2)?;
        c_in = c;
    }
    let side = cfg.input_size >> cfg.conv_channels.len();
    b.then(LayerSpec::Flatten)?;
    b.then(LayerSpec::Dense {
        inputs: c_in * side * side,
        units: cfg.dense_units,
    })?;
    b.then(LayerSpec::batchnorm(cfg.dense_units))?;
    b.then(LayerSpec::ReLU)?;
    b.then(LayerSpec::Dropout { rate: cfg.dropout })?;
    b.then(LayerSpec::Dense {
        inputs: cfg.dense_units,
        units: 1,
    })?;
    b.then(LayerSpec::Sigmoid)?;
    Ok(b.build())
}

/// Closed-form parameter count (see the module docs).
pub fn classifier_param_count(cfg: &ClfConfig) -> usize {
    let mut total = 0;
    let mut c_in = 1;
    for &c in &cfg.conv_channels {
        total += 9 * c_in * c + c + 2 * c;
        c_in = c;
    }
    let side = cfg.input_size >> cfg.conv_channels.len();
    let u = cfg.dense_units;
    total + (c_in * side * side + 1) * u + 2 * u + u + 1
}

/// Applies the requested flips; both together rotate by 180 degrees.
pub fn apply_flips(img: &Image, horizontal: bool, vertical: bool) -> Image {
    match (horizontal, vertical) {
        (false, false) => img.clone(),
        (true, false) => img.flip_horizontal(),
        (false, true) => img.flip_vertical(),
        (true, true) => img.flip_horizontal().flip_vertical(),
    }
}

/// Horizontal and vertical flips, each independently with probability 0.5.
pub fn augment(img: &Image, rng: &mut ChaCha8Rng) -> Image {
    let h = rng.random_bool(0.5);
    let v = rng.random_bool(0.5);
    apply_flips(img, h, v)
}

/// Training target: 1 for non-COVID, 0 for COVID.
pub fn target_of(label: Label) -> f32 {
    match label {
        Label::Covid => 0.0,
        Label::NonCovid => 1.0,
    }
}

/// Network input `[1, s, s]`: intensities divided by 255.
pub fn classifier_input(img: &Image) -> Tensor {
    let (w, h) = img.dims();
    Tensor::new(
        vec![1, h, w],
        img.pixels().iter().map(|&p| p as f32 / 255.0).collect(),
    )
    .expect("dims")
}

/// Labeled extracted slices, flipped at random when drawn.
pub struct SliceDataset<'a> {
    slices: &'a [(Image, Label)],
    augment: bool,
}

impl<'a> SliceDataset<'a> {
    pub fn new(slices: &'a [(Image, Label)], input_size: usize, augment: bool) -> Result<Self> {
        if let Some((img, _)) = slices
            .iter()
            .find(|(img, _)| img.dims() != (input_size, input_size))
        {
            return Err(Error::InvalidArgument(format!(
                "classifier expects {input_size}x{input_size} slices, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(Self { slices, augment })
    }
}

impl Dataset for SliceDataset<'_> {
    fn len(&self) -> usize {
        self.slices.len()
    }

    fn batch(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> covct_nn::Result<(Tensor, Tensor)> {
        let mut xs = Vec::with_capacity(indices.len());
        let mut ts = Vec::with_capacity(indices.len());
        for &i in indices {
            let (img, label) = &self.slices[i];
            let img = if self.augment {
                augment(img, rng)
            } else {
                img.clone()
            };
            xs.push(classifier_input(&img));
            ts.push(Tensor::new(vec![1], vec![target_of(*label)])?);
        }
        Ok((Tensor::stack(&xs)?, Tensor::stack(&ts)?))
    }
}

/// Trains with flip augmentation drawn per sample per epoch.
pub fn train_classifier(
    net: &mut Network,
    slices: &[(Image, Label)],
    cfg: &ClfConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let data = SliceDataset::new(slices, cfg.input_size, true)?;
    Ok(train(net, &data, &cfg.train_config(slices.len()))?)
}

/// Eval-mode probability that the slice is non-COVID.
pub fn predict_slice(net: &Network, img: &Image, cfg: &ClfConfig) -> Result<f32> {
    if img.dims() != (cfg.input_size, cfg.input_size) {
        return Err(Error::InvalidArgument(format!(
            "classifier expects {0}x{0} slices, got {1}x{2}",
            cfg.input_size,
            img.width(),
            img.height()
        )));
    }
    let x = classifier_input(img).reshape(&[1, 1, img.height(), img.width()])?;
    Ok(net.predict(&x)?.data()[0])
}

/// Per-slice probabilities computed in parallel, in input order.
pub fn predict_slices(net: &Network, imgs: &[Image], cfg: &ClfConfig) -> Result<Vec<f32>> {
    imgs.par_iter()
        .map(|img| predict_slice(net, img, cfg))
        .collect()
}

pub fn save_classifier(net: &Network, cfg: &ClfConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    covct_nn::save_weights(net, path)?;
    cfg.to_config().save(sidecar_path(path))
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<(Network, ClfConfig)> {
    let path = path.as_ref();
    let cfg = ClfConfig::from_config(&Config::load(sidecar_path(path))?)?;
    let mut net = build_classifier(&cfg)?;
    covct_nn::load_weights(&mut net, path)?;
    Ok((net, cfg))
}
