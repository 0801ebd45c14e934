//! Fits a batch-norm MLP to the blob renderer and saves it.
//!
//!     cargo run --release --example distill_generator -- [steps] [out.json]

use latent_anchors::diffnet::BatchNormMode;
use latent_anchors::generators::{distill_mlp, save_generator, DistillConfig, Generator};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> latent_anchors::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);
    let out = args.next();
    let source = Generator::default_blob();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = DistillConfig {
        steps,
        ..DistillConfig::default()
    };
    let (mlp, losses) = distill_mlp(&source, &cfg, &mut rng)?;
    for (i, l) in losses.iter().enumerate().step_by((steps / 10).max(1)) {
        println!("step {i:>5} loss {l:.5}");
    }

    let z = Array2::from_shape_fn((256, source.latent_dim()), |_| {
        StandardNormal.sample(&mut rng)
    });
    let want = source.generate_batch(&z, BatchNormMode::RunningStats)?;
    for mode in [BatchNormMode::BatchStats, BatchNormMode::RunningStats] {
        let got = mlp.generate_batch(&z, mode)?;
        let mse = (&got - &want).mapv(|v| v * v).mean().unwrap_or(0.0);
        println!("held-out MSE with {mode:?}: {mse:.5}");
    }
    if let Some(path) = out {
        save_generator(&mlp, &path)?;
        println!("saved {path}");
    }
    Ok(())
}
