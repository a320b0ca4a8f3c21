//! Detection of adversarially perturbed images from a compact vector of
//! handcrafted frequency, gradient, texture and distributional features,
//! scored by shallow classifiers.

pub mod attribution;
pub mod classifiers;
pub mod cli;
pub mod error;
pub mod freq;
pub mod image_io;
pub mod metrics;
pub mod mmd;
pub mod pipeline;
pub mod separability;
pub mod spatial;
pub mod synth;
pub mod util;
pub mod workflow;

pub use error::{Error, Result};
pub use image_io::GrayImage;
pub use pipeline::{FeatureVector, FEATURE_DIM, FEATURE_NAMES};
