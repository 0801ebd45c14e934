//! Timing and anchor-quality comparison across perturbation samplers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::{explain, Classifier};
use crate::cli::segment_image;
use crate::config::RunConfig;
use crate::dataio::LabeledDataset;
use crate::diffnet::BatchNormMode;
use crate::encoder::DiverseEncoder;
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::perturb::{GanSampler, InitSource, PerturbationSampler, StitchSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    Stitch,
    GanBatchStats,
    GanRunningStats,
    GanEncoder,
}

impl SamplerMode {
    pub const ALL: [SamplerMode; 4] = [
        SamplerMode::Stitch,
        SamplerMode::GanBatchStats,
        SamplerMode::GanRunningStats,
        SamplerMode::GanEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerMode::Stitch => "stitch",
            SamplerMode::GanBatchStats => "gan-batch-stats",
            SamplerMode::GanRunningStats => "gan-running-stats",
            SamplerMode::GanEncoder => "gan-encoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub instance: usize,
    pub class: usize,
    pub mode: SamplerMode,
    pub trial: usize,
    pub seed: u64,
    pub wall_time_secs: f64,
    /// Segment ids joined by `;`.
    pub anchor: String,
    pub anchor_size: usize,
    pub precision: f64,
    pub precision_lb: f64,
    pub coverage: f64,
    pub samples: u64,
    pub best_effort: bool,
    /// Mean gradient iterations per accepted latent; 0 for stitching.
    pub mean_iterations: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: SamplerMode,
    pub rows: usize,
    pub failures: usize,
    pub mean_wall_time_secs: f64,
    pub mean_anchor_size: f64,
    pub mean_precision: f64,
    pub mean_precision_lb: f64,
    pub mean_samples: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub summary: Vec<ModeSummary>,
    pub trials: usize,
    pub instances: Vec<usize>,
    /// Encoder training time, kept out of every explanation time.
    pub encoder_training_secs: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl BenchmarkReport {
    /// Builds the per-mode means from successful rows.
    pub fn from_rows(
        rows: Vec<BenchmarkRow>,
        modes: &[SamplerMode],
        trials: usize,
        instances: Vec<usize>,
        encoder_training_secs: Option<f64>,
    ) -> Self {
        let summary = modes
            .iter()
            .map(|&mode| {
                let all: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.mode == mode).collect();
                let ok: Vec<&BenchmarkRow> =
                    all.iter().copied().filter(|r| r.error.is_none()).collect();
                ModeSummary {
                    mode,
                    rows: all.len(),
                    failures: all.len() - ok.len(),
                    mean_wall_time_secs: mean(ok.iter().map(|r| r.wall_time_secs)),
                    mean_anchor_size: mean(ok.iter().map(|r| r.anchor_size as f64)),
                    mean_precision: mean(ok.iter().map(|r| r.precision)),
                    mean_precision_lb: mean(ok.iter().map(|r| r.precision_lb)),
                    mean_samples: mean(ok.iter().map(|r| r.samples as f64)),
                    mean_iterations: mean(ok.iter().map(|r| r.mean_iterations)),
                }
            })
            .collect();
        Self {
            rows,
            summary,
            trials,
            instances,
            encoder_training_secs,
        }
    }

    pub fn summary_for(&self, mode: SamplerMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub struct BenchmarkSetup<'a> {
    /// Instances to explain and background pool for stitching.
    pub dataset: &'a LabeledDataset,
    pub instances: &'a [usize],
    pub classifier: &'a dyn Classifier,
    pub generator: &'a Generator,
    pub encoder: Option<&'a DiverseEncoder>,
    pub config: &'a RunConfig,
    pub trials: usize,
    pub modes: &'a [SamplerMode],
    pub encoder_training_secs: Option<f64>,
}

/// Runs every `(instance, mode, trial)` combination. Trial `k` uses seed
/// `config.seed + k` for every mode, so rows pair up across modes. A failing
/// row records its error and the run goes on.
pub fn run_benchmark(setup: &BenchmarkSetup) -> Result<BenchmarkReport> {
    let cfg = setup.config;
    cfg.validate()?;
    let stitch = StitchSampler::new(setup.dataset.images().to_vec())?;
    let mut rows = Vec::new();
    for &idx in setup.instances {
        let x = setup.dataset.images().get(idx).ok_or_else(|| {
            Error::InvalidParameter(format!("instance {idx} outside the dataset"))
        })?;
        let class = setup.dataset.labels()[idx];
        let seg = segment_image(x, &cfg.segmentation)?.segmap;
        for &mode in setup.modes {
            for trial in 0..setup.trials {
                let seed = cfg.seed.wrapping_add(trial as u64);
                let mut ecfg = cfg.explain_config();
                ecfg.seed = seed;
                let mut scfg = cfg.sampler_config();
                let outcome = (|| -> Result<(crate::anchors::AnchorResult, f64)> {
                    let run = |sampler: &dyn PerturbationSampler| {
                        explain(x, setup.classifier, &seg, sampler, &ecfg)
                    };
                    match mode {
                        SamplerMode::Stitch => Ok((run(&stitch)?, 0.0)),
                        SamplerMode::GanBatchStats
                        | SamplerMode::GanRunningStats
                        | SamplerMode::GanEncoder => {
                            scfg.bn_mode = if mode == SamplerMode::GanRunningStats {
                                BatchNormMode::RunningStats
                            } else {
                                BatchNormMode::BatchStats
                            };
                            let sampler = if mode == SamplerMode::GanEncoder {
                                let enc = setup.encoder.ok_or_else(|| {
                                    Error::InvalidParameter(
                                        "encoder mode needs a trained encoder".into(),
                                    )
                                })?;
                                scfg.init = InitSource::EncoderSeeded;
                                GanSampler::with_encoder(setup.generator, scfg.clone(), enc)?
                            } else {
                                scfg.init = InitSource::StandardNormal;
                                GanSampler::new(setup.generator, scfg.clone())?
                            };
                            let res = run(&sampler)?;
                            Ok((res, sampler.stats().mean_iterations()))
                        }
                    }
                })();
                rows.push(match outcome {
                    Ok((res, iters)) => BenchmarkRow {
                        instance: idx,
                        class,
                        mode,
                        trial,
                        seed,
                        wall_time_secs: res.wall_time_secs,
                        anchor: res
                            .anchor
                            .ids()
                            .iter()
                            .map(usize::to_string)
                            .collect::<Vec<_>>()
                            .join(";"),
                        anchor_size: res.anchor.len(),
                        precision: res.precision,
                        precision_lb: res.precision_lb,
                        coverage: res.coverage,
                        samples: res.samples,
                        best_effort: res.best_effort,
                        mean_iterations: iters,
                        error: None,
                    },
                    Err(e) => BenchmarkRow {
                        instance: idx,
                        class,
                        mode,
                        trial,
                        seed,
                        wall_time_secs: 0.0,
                        anchor: String::new(),
                        anchor_size: 0,
                        precision: 0.0,
                        precision_lb: 0.0,
                        coverage: 0.0,
                        samples: 0,
                        best_effort: true,
                        mean_iterations: 0.0,
                        error: Some(e.to_string()),
                    },
                });
            }
        }
    }
    Ok(BenchmarkReport::from_rows(
        rows,
        setup.modes,
        setup.trials,
        setup.instances.to_vec(),
        setup.encoder_training_secs,
    ))
}
