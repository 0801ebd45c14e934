//! Command-line surface. Every subcommand writes only inside `--out-dir`
//! and takes all randomness from `--seed`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::anchors::explain;
use crate::benchmark::{run_benchmark, BenchmarkSetup, SamplerMode};
use crate::config::{RunConfig, SamplerKind, SegmentationMethod, SegmentationSection};
use crate::dataio::{
    gen_blob_world, load_idx, load_image, load_label_pgm, save_idx, save_image, save_label_pgm,
    train_classifier, ClassifierModel, ClassifierTrainConfig, LabeledDataset,
};
use crate::encoder::{train_encoder, DiverseEncoder};
use crate::error::{Error, Result};
use crate::generators::{load_generator, save_generator, Generator};
use crate::image::Image;
use crate::perturb::{GanSampler, InitSource, PerturbationSampler, SamplerRng, StitchSampler};
use crate::segmentation::{find_max_dist_for_count, mask_from_anchor, slic, AnchorSet, SegmentMap};

/// Segmentation plus the parameters that produced it.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub segmap: SegmentMap,
    pub sidecar: SegmentSidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSidecar {
    pub segments: usize,
    /// Quickshift cut distance; absent for SLIC.
    pub max_dist: Option<f64>,
    /// Whether the requested segment count was hit exactly.
    pub exact: bool,
    pub method: SegmentationMethod,
}

/// Segments `image` as configured. Quickshift searches `max_dist` for the
/// target count; SLIC runs with its fixed grid size.
pub fn segment_image(image: &Image, cfg: &SegmentationSection) -> Result<SegmentOutcome> {
    match cfg.method {
        SegmentationMethod::Quickshift => {
            let params = crate::segmentation::QuickshiftParams {
                kernel_size: cfg.kernel_size,
                ratio: cfg.ratio,
            };
            let search = find_max_dist_for_count(image, cfg.target_segments, params)?;
            let segmap =
                crate::segmentation::quickshift_forest(image, params)?.cut(search.max_dist);
            Ok(SegmentOutcome {
                sidecar: SegmentSidecar {
                    segments: segmap.count(),
                    max_dist: Some(search.max_dist),
                    exact: search.exact,
                    method: cfg.method,
                },
                segmap,
            })
        }
        SegmentationMethod::Slic => {
            let segmap = slic(image, cfg.slic_segments, cfg.slic_compactness)?;
            Ok(SegmentOutcome {
                sidecar: SegmentSidecar {
                    segments: segmap.count(),
                    max_dist: None,
                    exact: segmap.count() == cfg.slic_segments,
                    method: cfg.method,
                },
                segmap,
            })
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "latent-anchors",
    version,
    about = "Anchor explanations for image classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Directory receiving every output file.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named configuration used when no --config is given (desk or slic).
    #[arg(long, default_value = "desk")]
    pub preset: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    fn ext(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Gan,
    Stitch,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled blob-world dataset as IDX files.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10000)]
        n: usize,
        /// Also write the first `preview` images as image_NNNNN.pgm.
        #[arg(long, default_value_t = 8)]
        preview: usize,
    },
    /// Segment an image into superpixels.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        /// Target segment count (quickshift) or grid size (SLIC).
        #[arg(long)]
        target: Option<usize>,
    },
    /// Draw perturbations that keep an anchor fixed.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        /// Label PGM; computed from the image when omitted.
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Comma-separated segment ids, e.g. "1,4,7".
        #[arg(long, default_value = "")]
        anchor: String,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, value_enum, default_value_t = SamplerArg::Gan)]
        mode: SamplerArg,
        /// Generator weights, or "analytic" for the built-in blob renderer.
        #[arg(long, default_value = "analytic")]
        generator: String,
        /// Dataset directory supplying the stitching pool.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ImageFormat::Pgm)]
        format: ImageFormat,
    },
    /// Explain one classification with an anchor.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value = "analytic")]
        generator: String,
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
        #[arg(long)]
        xi: Option<f64>,
        /// Encoder weights; enables encoder-seeded latent initialization.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
        format: ImageFormat,
    },
    /// Train the MLP classifier on an IDX dataset.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        /// Hidden layer widths, comma separated.
        #[arg(long, default_value = "32")]
        hidden: String,
    },
    /// Train a diverse encoder against a generator.
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "analytic")]
        generator: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        n_encodings: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Target pairwise distance t.
        #[arg(long = "t")]
        target_distance: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Use only the first `limit` images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compare samplers over one instance per class.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value = "analytic")]
        generator: String,
        /// Trained encoder; one is trained (and timed) when omitted.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        /// Comma-separated modes; all four by default.
        #[arg(long)]
        modes: Option<String>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenDataset { common, .. }
            | Command::Segment { common, .. }
            | Command::Sample { common, .. }
            | Command::Explain { common, .. }
            | Command::TrainClassifier { common, .. }
            | Command::TrainEncoder { common, .. }
            | Command::Benchmark { common, .. } => common,
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(&common.preset)?,
    };
    cfg.seed = common.seed;
    Ok(cfg)
}

fn open_generator(spec: &str) -> Result<Generator> {
    if spec == "analytic" {
        Ok(Generator::default_blob())
    } else {
        load_generator(spec)
    }
}

fn open_dataset(dir: &Path) -> Result<LabeledDataset> {
    load_idx(dir.join("images.idx"), dir.join("labels.idx"))
}

fn open_segments(path: Option<&PathBuf>, image: &Image, cfg: &RunConfig) -> Result<SegmentMap> {
    let segmap = match path {
        Some(p) => load_label_pgm(p)?,
        None => segment_image(image, &cfg.segmentation)?.segmap,
    };
    if segmap.shape() != image.shape() {
        return Err(Error::InvalidParameter(format!(
            "segment map {:?} does not match image {:?}",
            segmap.shape(),
            image.shape()
        )));
    }
    Ok(segmap)
}

fn parse_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidParameter(format!("bad {what} entry {s:?}")))
        })
        .collect()
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct SampleEntry {
    file: String,
    anchor_mse: Option<f64>,
    threshold: Option<f64>,
    iterations: Option<usize>,
}

#[derive(Serialize)]
struct SampleManifest {
    mode: &'static str,
    anchor: Vec<usize>,
    xi: f64,
    samples: Vec<SampleEntry>,
    wall_time_secs: f64,
}

#[derive(Serialize)]
struct EncoderReport {
    n_encodings: usize,
    latent_dim: usize,
    lambda: f64,
    target_distance: f64,
    losses: Vec<f64>,
    steps: usize,
    wall_time_secs: f64,
}

fn execute(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    let mut cfg = load_config(common)?;
    let out = &common.out_dir;
    std::fs::create_dir_all(out)?;
    match cmd {
        Command::GenDataset { n, preview, .. } => {
            let ds = gen_blob_world(*n, cfg.seed)?;
            save_idx(&ds, out.join("images.idx"), out.join("labels.idx"))?;
            for (i, img) in ds.images().iter().take(*preview).enumerate() {
                save_image(img, out.join(format!("image_{i:05}.pgm")))?;
            }
            write_json(out.join("dataset.json"), ds.meta())?;
            save_generator(&Generator::default_blob(), out.join("generator.json"))?;
        }
        Command::Segment { image, target, .. } => {
            if let Some(t) = target {
                cfg.segmentation.target_segments = *t;
                cfg.segmentation.slic_segments = *t;
            }
            cfg.validate()?;
            let img = load_image(image)?;
            let seg = segment_image(&img, &cfg.segmentation)?;
            save_label_pgm(&seg.segmap, out.join("segments.pgm"))?;
            write_json(out.join("segments.json"), &seg.sidecar)?;
        }
        Command::Sample {
            image,
            segments,
            anchor,
            xi,
            n,
            mode,
            generator,
            dataset,
            format,
            ..
        } => {
            if let Some(xi) = xi {
                cfg.sampler.xi = *xi;
            }
            cfg.validate()?;
            let x = load_image(image)?;
            let segmap = open_segments(segments.as_ref(), &x, &cfg)?;
            let anchor_set = AnchorSet::new(parse_list(anchor, "anchor")?, segmap.count())?;
            let mask = mask_from_anchor(&segmap, &anchor_set);
            let mut rng = SamplerRng::seed_from_u64(cfg.seed);
            let start = Instant::now();
            let (images, entries): (Vec<Image>, Vec<Option<(f64, f64, usize)>>) = match mode {
                SamplerArg::Gan => {
                    let g = open_generator(generator)?;
                    let mut scfg = cfg.sampler_config();
                    scfg.init = InitSource::StandardNormal;
                    let sampler = GanSampler::new(&g, scfg)?;
                    let x_hat = x.masked(&mask)?;
                    let thr = sampler.thresholds(*n, &mut rng)?;
                    sampler
                        .sample_batch(&x_hat, &mask, &thr, &mut rng)?
                        .into_iter()
                        .map(|s| (s.image, Some((s.anchor_mse, s.threshold, s.iterations))))
                        .unzip()
                }
                SamplerArg::Stitch => {
                    let dir = dataset.as_ref().ok_or_else(|| {
                        Error::InvalidParameter("--mode stitch needs --dataset".into())
                    })?;
                    let pool = open_dataset(dir)?;
                    let sampler = StitchSampler::new(pool.images().to_vec())?;
                    let imgs = sampler.draw(&x, &mask, *n, &mut rng)?;
                    let k = imgs.len();
                    (imgs, vec![None; k])
                }
            };
            let wall = start.elapsed().as_secs_f64();
            let mut samples = Vec::new();
            for (i, (img, entry)) in images.iter().zip(entries).enumerate() {
                let file = format!("sample_{i:04}.{}", format.ext());
                save_image(img, out.join(&file))?;
                samples.push(SampleEntry {
                    file,
                    anchor_mse: entry.map(|e| e.0),
                    threshold: entry.map(|e| e.1),
                    iterations: entry.map(|e| e.2),
                });
            }
            let manifest = SampleManifest {
                mode: match mode {
                    SamplerArg::Gan => "gan",
                    SamplerArg::Stitch => "stitch",
                },
                anchor: anchor_set.ids().to_vec(),
                xi: cfg.sampler.xi,
                samples,
                wall_time_secs: wall,
            };
            write_json(out.join("manifest.json"), &manifest)?;
        }
        Command::Explain {
            image,
            classifier,
            generator,
            segments,
            tau,
            delta,
            beam,
            sampler,
            xi,
            encoder,
            dataset,
            format,
            ..
        } => {
            if let Some(v) = tau {
                cfg.anchors.tau = *v;
            }
            if let Some(v) = delta {
                cfg.anchors.delta = *v;
            }
            if let Some(v) = beam {
                cfg.anchors.beam_width = *v;
            }
            if let Some(v) = xi {
                cfg.sampler.xi = *v;
            }
            if let Some(s) = sampler {
                cfg.sampler.kind = match s {
                    SamplerArg::Gan => SamplerKind::Gan,
                    SamplerArg::Stitch => SamplerKind::Stitch,
                };
            }
            if encoder.is_some() {
                cfg.sampler.init = InitSource::EncoderSeeded;
            }
            cfg.validate()?;
            let x = load_image(image)?;
            let model = ClassifierModel::load(classifier)?;
            let segmap = open_segments(segments.as_ref(), &x, &cfg)?;
            let ecfg = cfg.explain_config();
            let result = match cfg.sampler.kind {
                SamplerKind::Stitch => {
                    let dir = dataset.as_ref().ok_or_else(|| {
                        Error::InvalidParameter("the stitch sampler needs --dataset".into())
                    })?;
                    let pool = open_dataset(dir)?;
                    let s = StitchSampler::new(pool.images().to_vec())?;
                    explain(&x, &model, &segmap, &s, &ecfg)?
                }
                SamplerKind::Gan => {
                    let g = open_generator(generator)?;
                    let scfg = cfg.sampler_config();
                    if scfg.init == InitSource::EncoderSeeded {
                        let path = encoder.as_ref().ok_or_else(|| {
                            Error::InvalidParameter(
                                "encoder-seeded initialization needs --encoder".into(),
                            )
                        })?;
                        let enc = DiverseEncoder::load(path)?;
                        let s = GanSampler::with_encoder(&g, scfg, &enc)?;
                        explain(&x, &model, &segmap, &s, &ecfg)?
                    } else {
                        let s = GanSampler::new(&g, scfg)?;
                        explain(&x, &model, &segmap, &s, &ecfg)?
                    }
                }
            };
            write_json(out.join("report.json"), &result)?;
            save_label_pgm(&segmap, out.join("segments.pgm"))?;
            let overlay = x.overlay(&mask_from_anchor(&segmap, &result.anchor), 0.25)?;
            save_image(&overlay, out.join(format!("overlay.{}", format.ext())))?;
        }
        Command::TrainClassifier {
            dataset,
            epochs,
            hidden,
            ..
        } => {
            let ds = open_dataset(dataset)?;
            let tcfg = ClassifierTrainConfig {
                hidden: parse_list(hidden, "hidden")?,
                epochs: *epochs,
                ..ClassifierTrainConfig::default()
            };
            let mut rng = SamplerRng::seed_from_u64(cfg.seed);
            let (model, report) = train_classifier(&ds, &tcfg, &mut rng)?;
            model.save(out.join("classifier.json"))?;
            write_json(out.join("report.json"), &report)?;
        }
        Command::TrainEncoder {
            generator,
            dataset,
            n_encodings,
            lambda,
            target_distance,
            epochs,
            limit,
            ..
        } => {
            if let Some(v) = n_encodings {
                cfg.encoder.n_encodings = *v;
            }
            if let Some(v) = lambda {
                cfg.encoder.lambda = *v;
            }
            if let Some(v) = target_distance {
                cfg.encoder.target_distance = *v;
            }
            if let Some(v) = epochs {
                cfg.encoder.epochs = *v;
            }
            cfg.validate()?;
            let g = open_generator(generator)?;
            let ds = open_dataset(dataset)?;
            let take = limit.unwrap_or(ds.len()).min(ds.len());
            let (enc, report) = fit_encoder(&g, &ds.images()[..take], &cfg)?;
            enc.save(out.join("encoder.json"))?;
            write_json(out.join("report.json"), &report)?;
        }
        Command::Benchmark {
            dataset,
            classifier,
            generator,
            encoder,
            trials,
            modes,
            ..
        } => {
            let modes = match modes {
                None => SamplerMode::ALL.to_vec(),
                Some(text) => text
                    .split(',')
                    .map(|m| {
                        SamplerMode::ALL
                            .into_iter()
                            .find(|mode| mode.name() == m.trim())
                            .ok_or_else(|| {
                                Error::InvalidParameter(format!("unknown sampler mode {m:?}"))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            let ds = open_dataset(dataset)?;
            let model = ClassifierModel::load(classifier)?;
            let g = open_generator(generator)?;
            let (enc, training_secs) = match (encoder, modes.contains(&SamplerMode::GanEncoder)) {
                (Some(path), _) => (Some(DiverseEncoder::load(path)?), None),
                (None, true) => {
                    let (enc, report) = fit_encoder(&g, ds.images(), &cfg)?;
                    (Some(enc), Some(report.wall_time_secs))
                }
                (None, false) => (None, None),
            };
            let instances: Vec<usize> = ds.class_representatives().into_iter().flatten().collect();
            let setup = BenchmarkSetup {
                dataset: &ds,
                instances: &instances,
                classifier: &model,
                generator: &g,
                encoder: enc.as_ref(),
                config: &cfg,
                trials: *trials,
                modes: &modes,
                encoder_training_secs: training_secs,
            };
            let report = run_benchmark(&setup)?;
            report.write_json(out.join("benchmark.json"))?;
            report.write_csv(out.join("benchmark.csv"))?;
        }
    }
    Ok(())
}

fn fit_encoder(
    g: &Generator,
    images: &[Image],
    cfg: &RunConfig,
) -> Result<(DiverseEncoder, EncoderReport)> {
    let mut rng = SamplerRng::seed_from_u64(cfg.seed);
    let segmaps = images
        .iter()
        .map(|img| segment_image(img, &cfg.segmentation).map(|s| s.segmap))
        .collect::<Result<Vec<_>>>()?;
    let init = DiverseEncoder::mlp(
        g.pixel_count(),
        cfg.encoder.hidden,
        cfg.encoder.n_encodings,
        g.latent_dim(),
        cfg.diversity(),
        &mut rng,
    )?;
    let start = Instant::now();
    let (enc, train) = train_encoder(
        &init,
        g,
        images,
        &segmaps,
        &cfg.encoder_train_config(),
        &mut rng,
    )?;
    let report = EncoderReport {
        n_encodings: enc.n_encodings(),
        latent_dim: enc.latent_dim(),
        lambda: cfg.encoder.lambda,
        target_distance: cfg.encoder.target_distance,
        losses: train.losses.iter().map(|l| l.total).collect(),
        steps: train.steps,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((enc, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_flag_is_usage_error() {
        assert_eq!(run(["latent-anchors", "segment", "--out-dir", "x"]), 2);
        assert_eq!(run(["latent-anchors", "bogus"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        for sub in [
            "gen-dataset",
            "segment",
            "sample",
            "explain",
            "train-classifier",
            "train-encoder",
            "benchmark",
        ] {
            assert_eq!(run(["latent-anchors", sub, "--help"]), 0, "{sub}");
        }
    }

    #[test]
    fn anchor_list_parsing() {
        assert_eq!(parse_list("1, 4,7", "anchor").unwrap(), vec![1, 4, 7]);
        assert!(parse_list("", "anchor").unwrap().is_empty());
        assert!(parse_list("1,x", "anchor").is_err());
    }
}
