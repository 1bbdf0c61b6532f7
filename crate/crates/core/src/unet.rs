//! UNet lung segmenter.
//!
//! Each level runs two 3x3 convolutions (each optionally followed by batch
//! norm) with ReLU. The encoder max-pools between levels, the decoder
//! upsamples by nearest neighbour and concatenates the matching encoder
//! output. A final 3x3 convolution to one channel and a sigmoid give the
//! lung probability map.
//!
//! With base width `b`, depth `D` and `c_i = b * 2^i`, the parameter count is
//!
//! ```text
//! conv(a, c) = 9ac + c            bn(c) = 2c (when enabled)
//! encoder    = block(1, c_0) + sum_{i=1}^{D-1} block(c_{i-1}, c_i)
//! bottleneck = block(c_{D-1}, c_D)
//! decoder    = sum_{i=0}^{D-1} block(c_{i+1} + c_i, c_i)
//! block(a,c) = conv(a, c) + conv(c, c) + 2 bn(c)
//! total      = encoder + bottleneck + decoder + conv(c_0, 1)
//! ```
//!
//! giving 487,137 parameters for the default `b = 16, D = 3` without batch
//! norm and 488,545 with it.

use std::path::Path;

use covct_nn::{
    train, Dataset, LayerSpec, Network, NetworkBuilder, Tensor, TensorDataset, TrainConfig,
    TrainLog,
};
use rayon::prelude::*;

use crate::config::{sidecar_path, Config};
use crate::error::{Error, Result};
use crate::imaging::{Mask, NormImage};

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub with_batchnorm: bool,
    pub input_size: usize,
    pub mask_threshold: f32,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            depth: 3,
            with_batchnorm: true,
            input_size: 224,
            mask_threshold: 0.5,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument(
                "UNet base_channels must be at least 1".into(),
            ));
        }
        if self.depth == 0 {
            return Err(Error::InvalidArgument(
                "UNet depth must be at least 1".into(),
            ));
        }
        let stride = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return Err(Error::InvalidArgument(format!(
                "UNet input_size {} is not a positive multiple of {stride}",
                self.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.mask_threshold) {
            return Err(Error::InvalidArgument(format!(
                "mask_threshold {} outside [0, 1)",
                self.mask_threshold
            )));
        }
        Ok(())
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("model", "unet");
        c.set("base_channels", self.base_channels);
        c.set("depth", self.depth);
        c.set("with_batchnorm", self.with_batchnorm);
        c.set("input_size", self.input_size);
        c.set("mask_threshold", self.mask_threshold);
        c
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        if c.get("model").is_some_and(|m| m != "unet") {
            return Err(Error::Parse(format!(
                "expected a unet model, found {:?}",
                c.get("model")
            )));
        }
        let d = Self::default();
        let cfg = Self {
            base_channels: c.parsed_or("base_channels", d.base_channels)?,
            depth: c.parsed_or("depth", d.depth)?,
            with_batchnorm: c.parsed_or("with_batchnorm", d.with_batchnorm)?,
            input_size: c.parsed_or("input_size", d.input_size)?,
            mask_threshold: c.parsed_or("mask_threshold", d.mask_threshold)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn conv_block(
    b: &mut NetworkBuilder,
    input: usize,
    in_c: usize,
    out_c: usize,
    bn: bool,
) -> Result<usize> {
    let mut c_in = in_c;
    for i in 0..2 {
        let conv = LayerSpec::Conv3x3Same {
            in_channels: c_in,
            out_channels: out_c,
        };
        if i == 0 {
            b.add(conv, &[input])?;
        } else {
            b.then(conv)?;
        }
        if bn {
            b.then(LayerSpec::batchnorm(out_c))?;
        }
        b.then(LayerSpec::ReLU)?;
        c_in = out_c;
    }
    Ok(b.last())
}

/// Builds the network with weights drawn from `seed`.
pub fn build_unet(cfg: &UNetConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let bn = cfg.with_batchnorm;
    let ch = |i: usize| cfg.base_channels << i;
    let mut b = NetworkBuilder::new(seed);
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut cur = 0;
    let mut c_in = 1;
    for level in 0..cfg.depth {
        cur = conv_block(&mut b, cur, c_in, ch(level), bn)?;
        skips.push(cur);
        cur = b.then(LayerSpec::MaxPool2)?;
        c_in = ch(level);
    }
    cur = conv_block(&mut b, cur, c_in, ch(cfg.depth), bn)?;
    for level in (0..cfg.depth).rev() {
        let up = b.add(LayerSpec::UpSample2, &[cur])?;
        let cat = b.add(LayerSpec::Concat, &[up, skips[level]])?;
        cur = conv_block(&mut b, cat, ch(level + 1) + ch(level), ch(level), bn)?;
    }
    b.add(
        LayerSpec::Conv3x3Same {
            in_channels: ch(0),
            out_channels: 1,
        },
        &[cur],
    )?;
    b.then(LayerSpec::Sigmoid)?;
    Ok(b.build())
}

/// Closed-form parameter count (see the module docs).
pub fn unet_param_count(cfg: &UNetConfig) -> usize {
    let conv = |a: usize, c: usize| 9 * a * c + c;
    let bn = |c: usize| if cfg.with_batchnorm { 2 * c } else { 0 };
    let block = |a: usize, c: usize| conv(a, c) + conv(c, c) + 2 * bn(c);
    let ch = |i: usize| cfg.base_channels << i;
    let encoder: usize = block(1, ch(0))
        + (1..cfg.depth)
            .map(|i| block(ch(i - 1), ch(i)))
            .sum::<usize>();
    let bottleneck = block(ch(cfg.depth - 1), ch(cfg.depth));
    let decoder: usize = (0..cfg.depth)
        .map(|i| block(ch(i + 1) + ch(i), ch(i)))
        .sum();
    encoder + bottleneck + decoder + conv(ch(0), 1)
}

fn check_size(img_dims: (usize, usize), cfg: &UNetConfig) -> Result<()> {
    if img_dims != (cfg.input_size, cfg.input_size) {
        return Err(Error::InvalidArgument(format!(
            "UNet expects {0}x{0} input, got {1}x{2}",
            cfg.input_size, img_dims.0, img_dims.1
        )));
    }
    Ok(())
}

/// Network input: the normalised image rescaled to `[0, 1]`.
pub fn unet_input(img: &NormImage) -> Tensor {
    let (w, h) = img.dims();
    Tensor::new(
        vec![1, h, w],
        img.values().iter().map(|v| v / 50.0 - 1.0).collect(),
    )
    .expect("dims")
}

fn mask_target(m: &Mask) -> Tensor {
    let (w, h) = m.dims();
    Tensor::new(
        vec![1, h, w],
        m.bits().iter().map(|&b| f32::from(u8::from(b))).collect(),
    )
    .expect("dims")
}

/// In-memory `(image, mask)` training pairs.
pub fn unet_dataset(pairs: &[(NormImage, Mask)], cfg: &UNetConfig) -> Result<TensorDataset> {
    let mut xs = Vec::with_capacity(pairs.len());
    let mut ts = Vec::with_capacity(pairs.len());
    for (img, m) in pairs {
        check_size(img.dims(), cfg)?;
        if img.dims() != m.dims() {
            return Err(Error::InvalidArgument(format!(
                "image {:?} and mask {:?} differ in size",
                img.dims(),
                m.dims()
            )));
        }
        xs.push(unet_input(img));
        ts.push(mask_target(m));
    }
    Ok(TensorDataset::new(xs, ts)?)
}

/// Trains with pixelwise binary cross-entropy on the sigmoid map.
pub fn train_unet(
    net: &mut Network,
    pairs: &[(NormImage, Mask)],
    cfg: &UNetConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainLog> {
    let data = unet_dataset(pairs, cfg)?;
    debug_assert_eq!(data.len(), pairs.len());
    Ok(train(net, &data, train_cfg)?)
}

/// Eval-mode lung probability for every pixel, row-major.
pub fn predict_probabilities(net: &Network, img: &NormImage, cfg: &UNetConfig) -> Result<Vec<f32>> {
    check_size(img.dims(), cfg)?;
    let x = unet_input(img);
    let shape = x.shape().to_vec();
    let batch = x.reshape(&[1, shape[0], shape[1], shape[2]])?;
    Ok(net.predict(&batch)?.into_data())
}

/// Foreground where the probability exceeds `threshold`.
pub fn threshold_probabilities(
    probs: &[f32],
    width: usize,
    height: usize,
    threshold: f32,
) -> Result<Mask> {
    Mask::new(
        width,
        height,
        probs.iter().map(|&p| p > threshold).collect(),
    )
}

pub fn predict_mask(net: &Network, img: &NormImage, cfg: &UNetConfig) -> Result<Mask> {
    let probs = predict_probabilities(net, img, cfg)?;
    threshold_probabilities(&probs, img.width(), img.height(), cfg.mask_threshold)
}

/// Predicts masks in parallel; results keep input order.
pub fn predict_masks(net: &Network, imgs: &[NormImage], cfg: &UNetConfig) -> Result<Vec<Mask>> {
    imgs.par_iter()
        .map(|img| predict_mask(net, img, cfg))
        .collect()
}

/// Output shape for a zero batch of `batch` images.
pub fn output_shape(net: &Network, cfg: &UNetConfig, batch: usize) -> Result<Vec<usize>> {
    let x = Tensor::zeros(&[batch, 1, cfg.input_size, cfg.input_size]);
    Ok(net.predict(&x)?.shape().to_vec())
}

/// Writes the weights to `path` and the architecture to `path.cfg`.
pub fn save_unet(net: &Network, cfg: &UNetConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    covct_nn::save_weights(net, path)?;
    cfg.to_config().save(sidecar_path(path))
}

pub fn load_unet(path: impl AsRef<Path>) -> Result<(Network, UNetConfig)> {
    let path = path.as_ref();
    let cfg = UNetConfig::from_config(&Config::load(sidecar_path(path))?)?;
    let mut net = build_unet(&cfg, 0)?;
    covct_nn::load_weights(&mut net, path)?;
    Ok((net, cfg))
}
