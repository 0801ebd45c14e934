//! Runs all four samplers over one instance per class and prints the
//! per-mode summary.
//!
//!     cargo run --release --example benchmark -- [trials]

use std::time::Instant;

use latent_anchors::benchmark::{run_benchmark, BenchmarkSetup, SamplerMode};
use latent_anchors::cli::segment_image;
use latent_anchors::config::RunConfig;
use latent_anchors::dataio::{gen_blob_world, train_classifier, ClassifierTrainConfig};
use latent_anchors::encoder::{train_encoder, DiverseEncoder};
use latent_anchors::generators::Generator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> latent_anchors::Result<()> {
    let trials = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let ds = gen_blob_world(3000, 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (clf, report) = train_classifier(&ds, &ClassifierTrainConfig::default(), &mut rng)?;
    println!(
        "classifier validation accuracy {:.3}",
        report.validation_accuracy
    );

    let cfg = RunConfig::desk();
    let g = Generator::default_blob();
    let start = Instant::now();
    let pool = &ds.images()[..1000];
    let segs = pool
        .iter()
        .map(|x| segment_image(x, &cfg.segmentation).map(|s| s.segmap))
        .collect::<latent_anchors::Result<Vec<_>>>()?;
    let enc = DiverseEncoder::mlp(
        g.pixel_count(),
        cfg.encoder.hidden,
        cfg.encoder.n_encodings,
        g.latent_dim(),
        cfg.diversity(),
        &mut rng,
    )?;
    let (enc, _) = train_encoder(&enc, &g, pool, &segs, &cfg.encoder_train_config(), &mut rng)?;
    let training = start.elapsed().as_secs_f64();

    let instances: Vec<usize> = ds.class_representatives().into_iter().flatten().collect();
    let setup = BenchmarkSetup {
        dataset: &ds,
        instances: &instances,
        classifier: &clf,
        generator: &g,
        encoder: Some(&enc),
        config: &cfg,
        trials,
        modes: &SamplerMode::ALL,
        encoder_training_secs: Some(training),
    };
    let report = run_benchmark(&setup)?;
    println!("encoder training {training:.1}s (not counted below)");
    println!(
        "{:<18} {:>5} {:>8} {:>8} {:>9} {:>9} {:>10}",
        "mode", "rows", "secs", "size", "precision", "samples", "iterations"
    );
    for s in &report.summary {
        println!(
            "{:<18} {:>5} {:>8.2} {:>8.2} {:>9.3} {:>9.0} {:>10.1}",
            s.mode.name(),
            s.rows - s.failures,
            s.mean_wall_time_secs,
            s.mean_anchor_size,
            s.mean_precision,
            s.mean_samples,
            s.mean_iterations
        );
    }
    Ok(())
}
