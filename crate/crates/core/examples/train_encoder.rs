//! Trains a diverse encoder against the blob renderer and compares it with a
//! plain (λ = 0) encoder on held-out masked images.

use latent_anchors::cli::segment_image;
use latent_anchors::config::RunConfig;
use latent_anchors::dataio::gen_blob_world;
use latent_anchors::encoder::{
    best_of_n_reconstruction, mean_pairwise_distance, train_encoder, DiverseEncoder,
};
use latent_anchors::generators::Generator;
use latent_anchors::segmentation::random_segment_mask;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> latent_anchors::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let ds = gen_blob_world(n + 200, 7)?;
    let cfg = RunConfig::desk();
    let g = Generator::default_blob();
    let segs = ds
        .images()
        .iter()
        .map(|x| segment_image(x, &cfg.segmentation).map(|s| s.segmap))
        .collect::<latent_anchors::Result<Vec<_>>>()?;
    let (train, test) = ds.images().split_at(n);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let masks = segs[n..]
        .iter()
        .map(|s| random_segment_mask(s, 0.5, &mut rng).map(|(_, m)| m))
        .collect::<latent_anchors::Result<Vec<_>>>()?;

    for lambda in [0.0, cfg.encoder.lambda] {
        let mut params = cfg.diversity();
        params.lambda = lambda;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = DiverseEncoder::mlp(
            g.pixel_count(),
            cfg.encoder.hidden,
            cfg.encoder.n_encodings,
            g.latent_dim(),
            params,
            &mut rng,
        )?;
        let mut tcfg = cfg.encoder_train_config();
        tcfg.epochs = 3;
        let (enc, report) = train_encoder(&enc, &g, train, &segs[..n], &tcfg, &mut rng)?;
        let last = report.losses.last().copied().unwrap_or_default();
        println!(
            "lambda {lambda}: {} steps, final loss {:.3} (reconstruction {:.3}, penalty {:.3})",
            report.steps, last.total, last.reconstruction, last.penalty
        );
        println!(
            "  held-out best-of-N reconstruction {:.3}, mean pairwise distance {:.3}",
            best_of_n_reconstruction(&enc, &g, test, &masks)?,
            mean_pairwise_distance(&enc, test, &masks)?
        );
    }
    Ok(())
}
