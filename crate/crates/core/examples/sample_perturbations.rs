//! Draws generator-based and stitched perturbations for a random anchor and
//! writes them as PGM files.
//!
//!     cargo run --release --example sample_perturbations -- [out-dir]

use latent_anchors::cli::segment_image;
use latent_anchors::config::RunConfig;
use latent_anchors::dataio::{gen_blob_world, save_image};
use latent_anchors::generators::Generator;
use latent_anchors::perturb::{
    anchor_mse, GanSampler, PerturbationSampler, SamplerRng, StitchSampler,
};
use latent_anchors::segmentation::random_segment_mask;
use rand::SeedableRng;

fn main() -> latent_anchors::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "perturbations".into());
    std::fs::create_dir_all(&out)?;
    let ds = gen_blob_world(500, 7)?;
    let x = &ds.images()[0];
    let cfg = RunConfig::desk();
    let seg = segment_image(x, &cfg.segmentation)?.segmap;
    let mut rng = SamplerRng::seed_from_u64(3);
    let (anchor, mask) = random_segment_mask(&seg, 0.5, &mut rng)?;
    println!(
        "anchor {:?} covers {} of {} pixels",
        anchor.ids(),
        mask.area(),
        x.len()
    );
    let x_hat = x.masked(&mask)?;

    let g = Generator::default_blob();
    let gan = GanSampler::new(&g, cfg.sampler_config())?;
    let thresholds = gan.thresholds(16, &mut rng)?;
    let samples = gan.sample_batch(&x_hat, &mask, &thresholds, &mut rng)?;
    for (i, s) in samples.iter().enumerate() {
        println!(
            "gan {i:>2}: threshold {:.4} raw anchor MSE {:.4} after {} iterations",
            s.threshold, s.anchor_mse, s.iterations
        );
        save_image(&s.image, format!("{out}/gan_{i:02}.pgm"))?;
    }

    let stitch = StitchSampler::new(ds.images()[1..].to_vec())?;
    for (i, y) in stitch.draw(x, &mask, 4, &mut rng)?.iter().enumerate() {
        assert_eq!(anchor_mse(&x_hat, &mask, y)?, 0.0);
        save_image(y, format!("{out}/stitch_{i:02}.pgm"))?;
    }
    save_image(x, format!("{out}/original.pgm"))?;
    save_image(&x.overlay(&mask, 0.25)?, format!("{out}/anchor.pgm"))?;
    println!("wrote images to {out}/");
    Ok(())
}
