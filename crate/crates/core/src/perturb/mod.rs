//! Perturbation distributions `D(·|A)` over images that agree with `x` on
//! the anchor `A`.
//!
//! [`GanSampler`] searches a generator's latent space for images whose
//! anchored pixels match `x̂ = A∘x` within a reconstruction threshold, then
//! pastes `x̂` back over them. [`StitchSampler`] is the baseline that fills the
//! non-anchor pixels from a random dataset image.

mod latent;
mod stitch;
mod threshold;

pub use latent::{sort_match, GanSampler, LatentSource, SamplerStats};
pub use stitch::{stitch_sample, StitchSampler};
pub use threshold::{sample_threshold, MAX_THRESHOLD_DRAWS};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::BatchNormMode;
use crate::error::{Error, Result};
use crate::image::{check_same_shape, BinaryMask, Image};

/// Random stream type threaded through every sampler.
pub type SamplerRng = ChaCha8Rng;

/// Denominator of the anchor reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MseNormalization {
    /// Mean over anchor pixels.
    #[default]
    AnchorPixels,
    /// Sum over anchor pixels divided by the full pixel count.
    AllPixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitSource {
    #[default]
    StandardNormal,
    EncoderSeeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Maximum anchor reconstruction error ξ.
    pub max_threshold: f64,
    pub learning_rate: f64,
    /// Iteration cap for a single latent in [`GanSampler::sample_single`].
    pub max_iters: usize,
    pub restart_interval: usize,
    /// Number of latents optimized together.
    pub batch_size: usize,
    /// Iteration cap for one [`GanSampler::sample_batch`] call.
    pub batch_iter_budget: usize,
    /// Draw per-sample thresholds below ξ instead of using ξ for all.
    pub threshold_sampling: bool,
    pub init: InitSource,
    pub init_noise: f64,
    pub bn_mode: BatchNormMode,
    pub mse: MseNormalization,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            max_threshold: 0.05,
            learning_rate: 0.05,
            max_iters: 5000,
            restart_interval: 1000,
            batch_size: 64,
            batch_iter_budget: 5000,
            threshold_sampling: true,
            init: InitSource::StandardNormal,
            init_noise: 0.3,
            bn_mode: BatchNormMode::BatchStats,
            mse: MseNormalization::AnchorPixels,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.max_threshold > 0.0 && self.max_threshold.is_finite()) {
            return bad("max threshold must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if self.restart_interval == 0 {
            return bad("restart interval must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.max_iters == 0 || self.batch_iter_budget == 0 {
            return bad("iteration budgets must be >= 1");
        }
        if !(self.init_noise >= 0.0) {
            return bad("init noise must be >= 0");
        }
        Ok(())
    }
}

/// One accepted draw from `D(·|A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    /// Patched-up image `(1−A)∘G(z) + x̂`.
    pub image: Image,
    /// Raw generator output `G(z)` as computed at acceptance.
    pub generated: Image,
    pub latent: Vec<f64>,
    pub anchor_mse: f64,
    pub threshold: f64,
    pub iterations: usize,
}

/// Source of perturbed images for the anchor search.
pub trait PerturbationSampler {
    fn draw(
        &self,
        x: &Image,
        mask: &BinaryMask,
        count: usize,
        rng: &mut SamplerRng,
    ) -> Result<Vec<Image>>;

    fn name(&self) -> &str;
}

/// Reconstruction error of `y` against `x̂` on the anchor. Zero when the
/// mask is empty.
pub fn anchor_mse(x_hat: &Image, mask: &BinaryMask, y: &Image) -> Result<f64> {
    anchor_mse_with(x_hat, mask, y, MseNormalization::AnchorPixels)
}

pub fn anchor_mse_with(
    x_hat: &Image,
    mask: &BinaryMask,
    y: &Image,
    norm: MseNormalization,
) -> Result<f64> {
    check_same_shape(x_hat.shape(), y.shape(), "anchor_mse")?;
    check_same_shape(x_hat.shape(), mask.shape(), "anchor_mse mask")?;
    Ok(mse_slice(x_hat.pixels(), mask.bits(), y.pixels(), norm))
}

pub(crate) fn mse_denominator(mask: &[bool], norm: MseNormalization) -> usize {
    match norm {
        MseNormalization::AnchorPixels => mask.iter().filter(|&&b| b).count(),
        MseNormalization::AllPixels => mask.len(),
    }
}

pub(crate) fn mse_slice(x_hat: &[f64], mask: &[bool], y: &[f64], norm: MseNormalization) -> f64 {
    let denom = mse_denominator(mask, norm);
    if denom == 0 {
        return 0.0;
    }
    let sum: f64 = x_hat
        .iter()
        .zip(y)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b) * (a - b))
        .sum();
    if sum == 0.0 {
        return 0.0;
    }
    sum / denom as f64
}

/// `y = (1−A)∘g + x̂`.
pub fn patch_up(mask: &BinaryMask, generated: &Image, x_hat: &Image) -> Result<Image> {
    check_same_shape(mask.shape(), generated.shape(), "patch_up")?;
    check_same_shape(mask.shape(), x_hat.shape(), "patch_up")?;
    let pixels = generated
        .pixels()
        .iter()
        .zip(x_hat.pixels())
        .zip(mask.bits())
        .map(|((&g, &xh), &a)| if a { xh } else { g + xh })
        .collect();
    let (h, w) = mask.shape();
    Image::new(h, w, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_match_on_anchor_is_zero() {
        let x = Image::new(2, 2, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let mask = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let x_hat = x.masked(&mask).unwrap();
        let mut y = x.clone();
        y.set(0, 1, 0.0);
        assert_eq!(anchor_mse(&x_hat, &mask, &y).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_single_pixel() {
        let mask = BinaryMask::new(2, 2, vec![true, false, false, false]).unwrap();
        let x_hat = Image::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = Image::new(2, 2, vec![0.5, 0.9, 0.1, 0.3]).unwrap();
        assert!((anchor_mse(&x_hat, &mask, &y).unwrap() - 0.25).abs() < 1e-15);
        let all = anchor_mse_with(&x_hat, &mask, &y, MseNormalization::AllPixels).unwrap();
        assert!((all - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn empty_anchor_is_zero_by_convention() {
        let mask = BinaryMask::zeros(2, 2);
        let y = Image::filled(2, 2, 0.7);
        assert_eq!(anchor_mse(&Image::zeros(2, 2), &mask, &y).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mask = BinaryMask::ones(2, 2);
        assert!(anchor_mse(&Image::zeros(2, 2), &mask, &Image::zeros(3, 2)).is_err());
    }

    #[test]
    fn patch_up_blends() {
        let g = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let xh = Image::new(2, 2, vec![0.9, 0.0, 0.0, 0.7]).unwrap();
        let ones = BinaryMask::ones(2, 2);
        let zeros = BinaryMask::zeros(2, 2);
        assert_eq!(patch_up(&ones, &g, &xh).unwrap(), xh);
        assert_eq!(patch_up(&zeros, &g, &Image::zeros(2, 2)).unwrap(), g);
        let mixed = BinaryMask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(
            patch_up(&mixed, &g, &xh).unwrap().pixels(),
            &[0.9, 0.2, 0.3, 0.7]
        );
    }
}
