//! Lung CT segmentation, lung extraction, slice classification and
//! patient-level COVID-19 diagnosis.
//!
//! The flow for one scan is: resize each slice, segment the lungs
//! ([`classicseg`] or [`unet`]), clean the mask and zero everything outside
//! it ([`morphology`]), drop slices with too little lung ([`pipeline`]),
//! classify the rest ([`classifier`]) and vote. [`data`] generates synthetic
//! scans with known ground truth for testing every stage.

pub mod classicseg;
pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod morphology;
pub mod pipeline;
pub mod unet;

pub use covct_nn as nn;
pub use error::{Error, Result};
pub use imaging::{Image, Mask, NormImage};
pub use pipeline::{CtScan, Label};
