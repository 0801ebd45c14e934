//! Anchor explanations for black-box image classifiers.
//!
//! An anchor is a set of superpixels that, when held fixed, keeps the
//! classifier's prediction with high probability no matter how the rest of
//! the image is perturbed. This crate estimates that probability with a
//! KL-LUCB bandit inside a beam search, and draws the perturbations either by
//! stitching in pixels from random dataset images or by optimizing the latent
//! vector of a differentiable generator until its output matches the anchored
//! pixels.
//!
//! Module map:
//! - [`diffnet`]: dense / batch-norm / activation layers with reverse-mode gradients and Adam.
//! - [`generators`]: analytic blob renderer and MLP generators.
//! - [`segmentation`]: quickshift, SLIC, segment-count search, anchor masks.
//! - [`perturb`]: latent-optimization samplers, threshold sampling, patch-up, stitching.
//! - [`bandit`]: Bernoulli KL bounds and KL-LUCB top-arm selection.
//! - [`anchors`]: coverage pools, candidate expansion and the anchor search.
//! - [`encoder`]: the diverse encoder used to warm-start latent optimization.
//! - [`dataio`]: blob-world datasets, IDX, PGM/PNG, classifiers.
//! - [`config`], [`benchmark`], [`cli`]: run configuration, benchmark harness and command handlers.

pub mod anchors;
pub mod bandit;
pub mod benchmark;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod diffnet;
pub mod encoder;
pub mod error;
pub mod generators;
pub mod image;
pub mod perturb;
pub mod segmentation;

pub use error::{Error, Result};
pub use image::{BinaryMask, Image};
