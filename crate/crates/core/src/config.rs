//! One validated JSON document holding every tunable of a run.
//!
//! Unknown keys are rejected at every level and missing keys fall back to
//! the desk-scale defaults. Quickshift's `kernel_size = 2` and `ratio = 1`
//! are desk-scale choices, not values taken from elsewhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::ExplainConfig;
use crate::diffnet::BatchNormMode;
use crate::encoder::{DiversityParams, EncoderTrainConfig};
use crate::error::{Error, Result};
use crate::perturb::{InitSource, MseNormalization, SamplerConfig};
use crate::segmentation::QuickshiftParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    #[default]
    Gan,
    Stitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentationMethod {
    #[default]
    Quickshift,
    Slic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorSection {
    pub tau: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub beam_width: usize,
    pub max_anchor_size: Option<usize>,
    pub batch_per_pull: u64,
    pub max_samples: u64,
    pub max_validation_samples: u64,
    pub coverage_pool_size: usize,
}

impl Default for AnchorSection {
    fn default() -> Self {
        let e = ExplainConfig::default();
        Self {
            tau: e.tau,
            delta: e.delta,
            epsilon: e.epsilon,
            beam_width: e.beam_width,
            max_anchor_size: e.max_anchor_size,
            batch_per_pull: e.batch_per_pull,
            max_samples: e.max_samples,
            max_validation_samples: e.max_validation_samples,
            coverage_pool_size: e.coverage_pool_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    /// Maximum anchor reconstruction error ξ.
    pub xi: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub restart_interval: usize,
    pub batch_size: usize,
    pub batch_iter_budget: usize,
    pub threshold_sampling: bool,
    pub init: InitSource,
    pub init_noise: f64,
    pub batchnorm_mode: BatchNormMode,
    pub mse: MseNormalization,
}

const BLOB_RESTART_INTERVAL: usize = 200;

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            kind: SamplerKind::Gan,
            xi: s.max_threshold,
            learning_rate: s.learning_rate,
            max_iters: s.max_iters,
            // A latent whose blobs sit far from the anchor gets almost no
            // gradient, so blob-world restarts sooner than the sampler default.
            restart_interval: BLOB_RESTART_INTERVAL,
            batch_size: s.batch_size,
            batch_iter_budget: s.batch_iter_budget,
            threshold_sampling: s.threshold_sampling,
            init: s.init,
            init_noise: s.init_noise,
            batchnorm_mode: s.bn_mode,
            mse: s.mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationSection {
    pub method: SegmentationMethod,
    /// Segment count the quickshift search aims for.
    pub target_segments: usize,
    pub kernel_size: f64,
    pub ratio: f64,
    pub slic_segments: usize,
    pub slic_compactness: f64,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self {
            method: SegmentationMethod::Quickshift,
            target_segments: 15,
            kernel_size: 2.0,
            ratio: 1.0,
            slic_segments: 10,
            slic_compactness: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub n_encodings: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub target_distance: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_p: f64,
    pub learning_rate: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = DiversityParams::default();
        let t = EncoderTrainConfig::default();
        Self {
            n_encodings: 4,
            hidden: 64,
            lambda: d.lambda,
            target_distance: d.target_distance,
            l2: d.l2,
            epochs: t.epochs,
            batch_size: t.batch_size,
            mask_p: t.mask_p,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub anchors: AnchorSection,
    pub sampler: SamplerSection,
    pub segmentation: SegmentationSection,
    pub encoder: EncoderSection,
    pub seed: u64,
}

impl RunConfig {
    /// Blob-world defaults.
    pub fn desk() -> Self {
        Self::default()
    }

    /// SLIC segmentation with 10 segments at compactness 20, ξ = 0.075, two
    /// encodings, λ = 1e-3 and an L2 weight of 1e-6.
    pub fn slic_preset() -> Self {
        let mut c = Self::default();
        c.segmentation.method = SegmentationMethod::Slic;
        c.segmentation.slic_segments = 10;
        c.segmentation.slic_compactness = 20.0;
        c.sampler.xi = 0.075;
        c.encoder.n_encodings = 2;
        c.encoder.lambda = 1e-3;
        c.encoder.l2 = 1e-6;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "default" => Ok(Self::desk()),
            "slic" => Ok(Self::slic_preset()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected desk or slic"
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn explain_config(&self) -> ExplainConfig {
        let a = &self.anchors;
        ExplainConfig {
            tau: a.tau,
            delta: a.delta,
            epsilon: a.epsilon,
            beam_width: a.beam_width,
            max_anchor_size: a.max_anchor_size,
            batch_per_pull: a.batch_per_pull,
            max_samples: a.max_samples,
            max_validation_samples: a.max_validation_samples,
            coverage_pool_size: a.coverage_pool_size,
            coverage_p: 0.5,
            seed: self.seed,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            max_threshold: s.xi,
            learning_rate: s.learning_rate,
            max_iters: s.max_iters,
            restart_interval: s.restart_interval,
            batch_size: s.batch_size,
            batch_iter_budget: s.batch_iter_budget,
            threshold_sampling: s.threshold_sampling,
            init: s.init,
            init_noise: s.init_noise,
            bn_mode: s.batchnorm_mode,
            mse: s.mse,
        }
    }

    pub fn quickshift_params(&self) -> QuickshiftParams {
        QuickshiftParams {
            kernel_size: self.segmentation.kernel_size,
            ratio: self.segmentation.ratio,
        }
    }

    pub fn diversity(&self) -> DiversityParams {
        DiversityParams {
            lambda: self.encoder.lambda,
            target_distance: self.encoder.target_distance,
            l2: self.encoder.l2,
        }
    }

    pub fn encoder_train_config(&self) -> EncoderTrainConfig {
        EncoderTrainConfig {
            epochs: self.encoder.epochs,
            batch_size: self.encoder.batch_size,
            mask_p: self.encoder.mask_p,
            learning_rate: self.encoder.learning_rate,
        }
    }

    /// Range checks on every field.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.explain_config()
            .validate()
            .map_err(|e| Error::Config(format!("anchors: {e}")))?;
        self.sampler_config()
            .validate()
            .map_err(|e| Error::Config(format!("sampler: {e}")))?;
        let seg = &self.segmentation;
        if seg.target_segments == 0 || seg.slic_segments == 0 {
            return fail("segmentation: segment counts must be >= 1".into());
        }
        if !(seg.kernel_size > 0.0) || !(seg.ratio >= 0.0) || !(seg.slic_compactness > 0.0) {
            return fail(
                "segmentation: kernel_size and compactness must be > 0, ratio >= 0".into(),
            );
        }
        let enc = &self.encoder;
        if enc.n_encodings == 0 || enc.hidden == 0 || enc.epochs == 0 || enc.batch_size == 0 {
            return fail("encoder: n_encodings, hidden, epochs and batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&enc.mask_p) || !(enc.learning_rate > 0.0) {
            return fail("encoder: mask_p must lie in [0, 1] and learning_rate be > 0".into());
        }
        self.diversity()
            .validate()
            .map_err(|e| Error::Config(format!("encoder: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::slic_preset()] {
            cfg.validate().unwrap();
            assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "colour": "red"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sampler": {"xii": 0.1}}"#).is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"anchors": {"tau": 0.9}}"#).unwrap();
        assert_eq!(cfg.anchors.tau, 0.9);
        assert_eq!(cfg.sampler.xi, 0.05);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(RunConfig::from_json(r#"{"anchors": {"tau": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sampler": {"xi": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sampler": {"restart_interval": 0}}"#).is_err());
    }
}
