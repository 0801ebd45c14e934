//! Trains a classifier on blob-world and explains a few test images with
//! both the generator-based sampler and random stitching.

use latent_anchors::anchors::explain;
use latent_anchors::cli::segment_image;
use latent_anchors::config::RunConfig;
use latent_anchors::dataio::{gen_blob_world, train_classifier, ClassifierTrainConfig};
use latent_anchors::generators::Generator;
use latent_anchors::perturb::{GanSampler, StitchSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> latent_anchors::error::Result<()> {
    let count: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let ds = gen_blob_world(10000, 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (clf, report) = train_classifier(&ds, &ClassifierTrainConfig::default(), &mut rng)?;
    println!("validation accuracy {:.3}", report.validation_accuracy);

    let mut cfg = RunConfig::desk();
    if let Some(b) = std::env::args().nth(2).and_then(|s| s.parse().ok()) {
        cfg.anchors.max_samples = b;
    }
    let g = Generator::default_blob();
    let gan = GanSampler::new(&g, cfg.sampler_config())?;
    let stitch = StitchSampler::new(ds.images()[..8000].to_vec())?;
    for i in 9000..9000 + count {
        let x = &ds.images()[i];
        let seg = segment_image(x, &cfg.segmentation)?;
        for (name, sampler) in [
            (
                "gan",
                &gan as &dyn latent_anchors::perturb::PerturbationSampler,
            ),
            ("stitch", &stitch),
        ] {
            let r = explain(x, &clf, &seg.segmap, sampler, &cfg.explain_config())?;
            println!(
                "image {i} label {} segments {} {name}: anchor {:?} precision {:.3} lb {:.3} coverage {:.3} samples {} {:.2}s{}",
                ds.labels()[i],
                seg.segmap.count(),
                r.anchor.ids(),
                r.precision,
                r.precision_lb,
                r.coverage,
                r.samples,
                r.wall_time_secs,
                if r.best_effort { " best-effort" } else { "" }
            );
        }
    }
    println!(
        "mean latent iterations {:.1}",
        gan.stats().mean_iterations()
    );
    Ok(())
}
